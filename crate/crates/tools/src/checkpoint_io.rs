use std::fs;
use std::path::Path;

use mitosis_core::checkpoint::{Checkpoint, Stage};

use crate::{io_err, Error, Result};

/// Write through a sibling temporary file and rename, so a crash never
/// leaves a half-written checkpoint under the final name.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, ck.to_bytes()).map_err(io_err(tmp))?;
    fs::rename(tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path, stage: Stage) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Checkpoint::from_bytes_for(&bytes, stage).map_err(|source| Error::Core {
        path: path.to_path_buf(),
        source,
    })
}
