pub mod density;
pub mod error;
pub mod linalg;
pub mod model;
pub mod projection;
pub mod hjb;
pub mod mc;
pub mod surface;
pub mod oracle;
pub mod config;
pub mod pipeline;
