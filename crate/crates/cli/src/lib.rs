pub mod archive;
pub mod replay;
pub mod server;
pub mod wire;
