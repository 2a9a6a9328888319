use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::failure::Failure;

/// Writes to `path` through a temporary file in the same directory, renamed
/// into place only after `body` succeeds; `None` writes to stdout.
pub fn emit<F>(path: Option<&Path>, body: F) -> Result<(), Failure>
where
    F: FnOnce(&mut dyn Write) -> Result<(), Failure>,
{
    match path {
        None => {
            let stdout = io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            body(&mut out)?;
            out.flush()?;
            Ok(())
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Failure::io(path, e))?;
            {
                let mut out = BufWriter::new(tmp.as_file());
                body(&mut out)?;
                out.flush().map_err(|e| Failure::io(path, e))?;
            }
            tmp.as_file().sync_all().map_err(|e| Failure::io(path, e))?;
            tmp.persist(path).map_err(|e| Failure::io(path, e.error))?;
            Ok(())
        }
    }
}

pub fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::io(path, e))
}
