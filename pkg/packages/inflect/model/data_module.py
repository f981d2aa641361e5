import logging
from typing import Optional

from lightning.pytorch import LightningDataModule
from torch.utils.data import DataLoader

from inflect.model.dataset import MotifDataset, TokenSet
from inflect.utility.seeding import torch_generator

logger = logging.getLogger(__name__)


class TransferDataModule(LightningDataModule):
    """Train/val loaders over in-memory token sets with a seeded shuffle order."""

    def __init__(self, train: TokenSet, val: Optional[TokenSet] = None, batch_size: int = 16,
                 val_batch_size: int = 256, seed: int = 0, num_workers: int = 0):
        super().__init__()
        self.train = train
        self.val = val
        self.batch_size = batch_size
        self.val_batch_size = val_batch_size
        self.seed = seed
        self.num_workers = num_workers

    def build_dataloader(self, dataset_type):
        is_train = dataset_type == 'train'
        token_set = self.train if is_train else self.val
        if token_set is None or len(token_set) == 0:
            logger.warning(f"No {dataset_type} data configured; returning None for the {dataset_type} dataloader.")
            return None

        return DataLoader(
            MotifDataset(token_set),
            batch_size=self.batch_size if is_train else self.val_batch_size,
            shuffle=is_train,
            generator=torch_generator(self.seed) if is_train else None,
            num_workers=self.num_workers,
            drop_last=False,
        )

    def train_dataloader(self):
        return self.build_dataloader(dataset_type='train')

    def val_dataloader(self):
        return self.build_dataloader(dataset_type='val')
