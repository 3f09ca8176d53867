//! Operator surface for edgecache: batch subcommands, remote backend clients
//! and the request service.

pub mod commands;
pub mod remote;
pub mod service;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] edgecache::Error),

    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },

    #[error("server failed: {0}")]
    Serve(std::io::Error),
}
