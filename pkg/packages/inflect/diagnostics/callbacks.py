import logging

from lightning.pytorch import Callback

from inflect.diagnostics.metrics import DiagnosticsLog, activation_grad_norm, attention_entropy, param_grad_norm

logger = logging.getLogger(__name__)


class LayerDiagnosticsCallback(Callback):
    """Records entropy, activation-gradient and parameter-gradient norms of every layer after each backward.

    Steps are numbered from 1. The module must expose ``model`` (a MiniEncoder)
    and ``last_trace`` from its training step.
    """

    def __init__(self, num_layers: int):
        self.diagnostics_log = DiagnosticsLog(num_layers)

    def on_after_backward(self, trainer, pl_module):
        trace = pl_module.last_trace
        model = pl_module.model
        layers = range(self.diagnostics_log.num_layers)
        self.diagnostics_log.record(
            step=trainer.global_step + 1,
            entropy=[attention_entropy(trace.attentions[layer], trace.key_mask) for layer in layers],
            activation=[activation_grad_norm(model.graph, layer) for layer in layers],
            param=[param_grad_norm(model, layer) for layer in layers],
        )
