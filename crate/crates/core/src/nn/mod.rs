//! A deliberately small training stack: direct convolution, ReLU, global
//! average pooling, a dense classifier head and PiX, trained with
//! momentum SGD on softmax cross-entropy.

mod cifar;
mod gradcheck;
mod layers;
mod model;
mod train;

pub use gradcheck::{check_model_gradients, ModelCheckOptions, ModelCheckReport};
pub use cifar::{load_cifar10, load_cifar10_file, CIFAR10_TRAIN_FILES};
pub use layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, softmax_cross_entropy, Conv2d,
    ConvGradients, FullyConnected, FcGradients,
};
pub use model::{build_network, sgd_step, Arch, Gradients, Layer, LayerCache, Model, PixLayer};
pub use train::{evaluate, train, Dataset, EpochRecord, TrainConfig};
