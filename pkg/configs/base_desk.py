# Desk-scale experiment: one source/target shift, both pretraining regimes,
# every fine-tuning strategy, three seeds.

seeds = [42, 43, 44]
out_dir = 'runs/desk'
progress = False

# Architecture
model = dict(
    num_layers=6,
    num_heads=4,
    d_model=64,
    d_ff=256,
    vocab_size=64,
    max_seq_len=32,
    num_classes=2,
    dropout=0.1,
)

# Data
task = dict(
    vocab_size=64,
    seq_len=32,
    num_classes=2,
    family='token-motif',
    motif_len=3,
    motifs_per_class=2,
    substitution_rate=0.5,
    label_correlation=0.9,
    source_size=4096,
    target_size=2048,
    val_size=512,
)

# Pretraining (source domain, all parameters)
regimes = dict(
    UNDER=dict(source_epochs=1, lr=1e-3, batch_size=32),
    OVER=dict(source_epochs=8, lr=1e-3, batch_size=32),
)

# Fine-tuning defaults shared by every strategy
finetune = dict(steps=300, lr=2e-5, batch_size=16, weight_decay=0.01)

lora = dict(rank=4, alpha=16.0, dropout=0.05, targets=('query', 'key', 'value'))

strategies = [
    dict(name='shallow', k=2),
    dict(name='full'),
    dict(name='selective-lora', band_source='greedy'),
    dict(name='lora-everywhere'),
    dict(name='frozen-all'),
]

locator = dict(method='greedy', alpha_mix=0.5, threshold=0.25, s=1, calibration_steps=20)

diagnostics = dict(pca_dim=16, cka_samples=512, eval_batch_size=256)

probe = dict(kind='linear', epochs=20, batch_size=128, learning_rate=3e-3, train_size=1000, val_size=512)
