pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod pgm;
pub mod slice_file;
pub mod svr_text;
pub mod tables;
