//! Minimal stderr logger gated by `MAXSMOOTH_LOG_LEVEL` (error, info, debug).

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Level {
    Error = 0,
    Info = 1,
    Debug = 2,
}

fn level() -> Level {
    static LEVEL: OnceLock<Level> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("MAXSMOOTH_LOG_LEVEL").as_deref() {
        Ok("debug") => Level::Debug,
        Ok("info") => Level::Info,
        _ => Level::Error,
    })
}

pub fn info(msg: &str) {
    if level() >= Level::Info {
        eprintln!("[maxsmooth] {msg}");
    }
}

pub fn debug(msg: &str) {
    if level() >= Level::Debug {
        eprintln!("[maxsmooth:debug] {msg}");
    }
}

pub fn error(msg: &str) {
    eprintln!("[maxsmooth:error] {msg}");
}
