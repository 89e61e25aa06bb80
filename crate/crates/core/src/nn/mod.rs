//! Convolutional network with exact backpropagation: convolution, average
//! pooling, squeeze-excitation, dense blocks, transitions and a linear head,
//! trained with mini-batch Adam.

mod checkpoint;
mod kernels;
mod layers;
mod model;
mod tensor;
mod train;

pub use checkpoint::{layer_table, load_model, load_model_for, model_from_bytes, model_to_bytes, save_model, LayerRecord, MODEL_MAGIC, MODEL_VERSION};
pub use layers::{
    avgpool2, avgpool2_backward, conv2d_backward, conv2d_forward, cross_entropy, relu_backward_in_place, relu_in_place, softmax, Conv2d,
    ConvGrads, DenseBlock, DenseCache, Head, Se, SeCache, Transition,
};
pub use model::{build_layers, InputNorm, Layer, LayerEntry, Model, ModelSpec};
pub use tensor::Tensor;
pub use train::{
    evaluate, input_statistics, predict_all, predicted_class, train, train_observed, EpochRecord, History, InMemorySet, LabeledSet, LrSchedule,
    TrainConfig,
};
