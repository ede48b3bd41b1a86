//! CLI verbs and the HTTP service for `medprompt`.

pub mod api;
pub mod cli;
pub mod workspace;
