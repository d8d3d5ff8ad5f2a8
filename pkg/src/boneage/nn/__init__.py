from .attention import (
    MODULE_NAMES,
    AblationSpec,
    AttentionCapture,
    AttentionModule,
    AttentionNet,
    NetworkConfig,
    apply_ablation,
    build_network,
    parameter_count,
    set_ablation,
)
from .heatmap import export_heatmap, save_heatmap
from .layers import BatchNorm2d, Conv2d, Linear, Module, ModuleList, ResidualUnit
