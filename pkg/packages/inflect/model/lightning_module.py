import torch
import torchmetrics
from lightning import LightningModule
from torch.optim import AdamW

from inflect.errors import InvalidInputError
from inflect.model.architectures.encoder import MiniEncoder
from inflect.model.autodiff import softmax_cross_entropy


class TransferModule(LightningModule):
    """
    Wraps a MiniEncoder for pretraining and fine-tuning.

    The optimizer only sees parameters that require grad at the time
    ``configure_optimizers`` runs, so the trainability pattern must be applied
    before ``Trainer.fit``. The learning rate is constant.
    """

    def __init__(self, model: MiniEncoder, lr: float, weight_decay: float = 0.01):
        super().__init__()
        self.save_hyperparameters(ignore=["model"])
        self.model = model
        self.lr = lr
        self.weight_decay = weight_decay
        self.last_trace = None
        self.last_loss = None

        num_classes = model.cfg.num_classes
        self.val_metrics = torch.nn.ModuleDict({
            'acc': torchmetrics.Accuracy(task='multiclass', num_classes=num_classes),
        })

    def configure_optimizers(self):
        params = [p for p in self.model.parameters() if p.requires_grad]
        if not params:
            raise InvalidInputError("nothing is trainable; skip optimisation instead of building an optimizer")
        return AdamW(params, lr=self.lr, weight_decay=self.weight_decay)

    def forward(self, tokens):
        return self.model(tokens)

    def training_step(self, batch, batch_idx):
        tokens, labels = batch
        trace = self.forward(tokens)
        loss, _ = softmax_cross_entropy(trace.logits, labels)
        self.last_trace = trace
        self.last_loss = loss.detach()
        self.log('train_loss', loss, on_step=True, on_epoch=False, prog_bar=True, batch_size=tokens.shape[0])
        return loss

    def backward(self, loss, *args, **kwargs):
        # the graph guards the pass and zero-fills taps the loss never reached
        self.model.graph.backward(loss)

    def validation_step(self, batch, batch_idx):
        tokens, labels = batch
        trace = self.forward(tokens)
        loss, _ = softmax_cross_entropy(trace.logits, labels)
        self.log('val_loss', loss, on_step=False, on_epoch=True, batch_size=tokens.shape[0])
        for metric in self.val_metrics.values():
            metric(trace.logits.argmax(dim=-1), labels)

    def on_validation_epoch_end(self):
        for name, metric in self.val_metrics.items():
            self.log(f'val_{name}', metric.compute(), prog_bar=True)
            metric.reset()
