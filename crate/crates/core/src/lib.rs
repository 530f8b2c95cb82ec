pub mod audio_io;
pub mod autoencoder;
mod binio;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod features;
pub mod learning;
pub mod matrix_io;
pub mod selection;
pub mod textures;

pub use error::{Error, Result};
