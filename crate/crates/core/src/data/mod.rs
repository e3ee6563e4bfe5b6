//! Procedural tactile dataset: renderer, on-disk format and annotation adapter.

pub mod annotation;
pub mod dataset;
pub mod palette;
pub mod ppm;
pub mod render;

pub use annotation::{
    annotator_from_env, build_annotation_prompt, parse_annotation_response, Annotation, AnnotationTemplate,
    Annotator, HttpAnnotator, SidecarAnnotator,
};
pub use dataset::{
    generate_dataset, load_dataset, read_dataset, read_manifest, write_dataset, DataConfig, Dataset,
    DatasetManifest, Split, Splits,
};
pub use palette::{GelPalette, GelStyle};
pub use render::{ShapeKind, SyntheticGenerator, TactileSample, TextureKind};
