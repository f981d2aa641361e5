# Seconds-scale run of the whole pipeline; used by the test suite.

_base_ = ['base_desk.py']

seeds = [0, 1]
out_dir = 'runs/smoke'

model = dict(num_layers=3, num_heads=2, d_model=16, d_ff=32)

task = dict(source_size=128, target_size=96, val_size=64)

regimes = dict(
    UNDER=dict(source_epochs=1, batch_size=32),
    OVER=dict(source_epochs=2, batch_size=32),
)

finetune = dict(steps=4, batch_size=16)

locator = dict(calibration_steps=3)

diagnostics = dict(pca_dim=8, cka_samples=64, eval_batch_size=64)

probe = dict(epochs=2, batch_size=32, train_size=64, val_size=64)
