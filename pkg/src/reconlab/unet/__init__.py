from .layers import (
    StaleTapeError,
    concat_backward,
    concat_forward,
    conv3d_backward,
    conv3d_forward,
    maxpool3d_backward,
    maxpool3d_forward,
    relu_backward,
    relu_forward,
    upconv3d_backward,
    upconv3d_forward,
)
from .network import Tape, UNet, UNetConfig, unet_forward, unet_forward_2d
from .train import (
    AdamState,
    TrainConfig,
    TrainingError,
    TrainResult,
    adam_step,
    history_csv,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)
