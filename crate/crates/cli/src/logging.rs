use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use log::LevelFilter;

static ACTIVE: AtomicBool = AtomicBool::new(false);

/// Log sink writing every line to stderr and, when present, a run log.
#[derive(Clone)]
struct Tee(Option<Arc<Mutex<File>>>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        if let Some(f) = &self.0 {
            f.lock().expect("log file lock").write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        if let Some(f) = &self.0 {
            f.lock().expect("log file lock").flush()?;
        }
        io::stderr().flush()
    }
}

/// Starts logging at `info` (overridable through `RUST_LOG`), appending to
/// `log_file` when given. Lines carry no timestamps so reruns produce
/// identical logs.
pub fn init(log_file: Option<&Path>) -> anyhow::Result<()> {
    let file = log_file
        .map(|p| {
            File::options()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))
        })
        .transpose()?
        .map(|f| Arc::new(Mutex::new(f)));
    env_logger::Builder::new()
        .filter_level(LevelFilter::Info)
        .parse_default_env()
        .format_timestamp(None)
        .format_target(false)
        .target(env_logger::Target::Pipe(Box::new(Tee(file))))
        .try_init()?;
    ACTIVE.store(true, Ordering::SeqCst);
    Ok(())
}

pub fn active() -> bool {
    ACTIVE.load(Ordering::SeqCst)
}

pub fn flush() {
    log::logger().flush();
}
