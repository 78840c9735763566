//! File host abstraction. The machine state stays pure data; every byte
//! that touches a file goes through a `FileHost` passed into the step
//! loop. Paths are relative to the host's transfer root.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum HostError {
    OpenFailure { path: String, mode: String },
    SeekBeyondEnd { path: String, position: u64 },
    BadMode(String),
    Io(String),
}

impl fmt::Display for HostError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HostError::OpenFailure { path, mode } => {
                write!(f, "cannot open `{path}` in mode `{mode}`")
            }
            HostError::SeekBeyondEnd { path, position } => {
                write!(f, "position {position} is past the end of `{path}`")
            }
            HostError::BadMode(m) => write!(f, "bad file mode `{m}`"),
            HostError::Io(msg) => write!(f, "io failure: {msg}"),
        }
    }
}

pub trait FileHost {
    fn exists(&self, path: &str) -> bool;
    fn size(&self, path: &str) -> Result<u64, HostError>;
    /// Create the file, truncating any previous content.
    fn create(&mut self, path: &str) -> Result<(), HostError>;
    fn read(&self, path: &str, offset: u64, len: u64) -> Result<Vec<u8>, HostError>;
    fn write(&mut self, path: &str, offset: u64, data: &[u8]) -> Result<(), HostError>;

    fn read_all(&self, path: &str) -> Result<Vec<u8>, HostError> {
        let n = self.size(path)?;
        self.read(path, 0, n)
    }
}

pub const FILE_MODES: &[&str] = &["r", "w", "a", "r+", "rb", "wb", "ab", "rb+"];

pub fn mode_is_valid(mode: &str) -> bool {
    FILE_MODES.contains(&mode)
}

pub fn mode_readable(mode: &str) -> bool {
    matches!(mode, "r" | "rb" | "r+" | "rb+")
}

pub fn mode_writable(mode: &str) -> bool {
    matches!(mode, "w" | "wb" | "a" | "ab" | "r+" | "rb+")
}

/// Open a path with file-mode semantics and return the initial position.
pub fn open_with_mode<H: FileHost + ?Sized>(
    host: &mut H,
    path: &str,
    mode: &str,
) -> Result<u64, HostError> {
    if !mode_is_valid(mode) {
        return Err(HostError::BadMode(String::from(mode)));
    }
    match mode {
        "r" | "rb" | "r+" | "rb+" => {
            if !host.exists(path) {
                return Err(HostError::OpenFailure {
                    path: String::from(path),
                    mode: String::from(mode),
                });
            }
            Ok(0)
        }
        "w" | "wb" => {
            host.create(path)?;
            Ok(0)
        }
        "a" | "ab" => {
            if !host.exists(path) {
                host.create(path)?;
            }
            host.size(path)
        }
        _ => unreachable!(),
    }
}

/// In-memory host used by tests and by machines that never touch a real
/// file system.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemFs {
    files: BTreeMap<String, Vec<u8>>,
}

impl MemFs {
    pub fn new() -> MemFs {
        MemFs::default()
    }

    pub fn insert(&mut self, path: &str, content: &[u8]) {
        self.files.insert(String::from(path), content.to_vec());
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.files.keys()
    }
}

impl FileHost for MemFs {
    fn exists(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    fn size(&self, path: &str) -> Result<u64, HostError> {
        self.files
            .get(path)
            .map(|f| f.len() as u64)
            .ok_or_else(|| HostError::Io(alloc::format!("no such file `{path}`")))
    }

    fn create(&mut self, path: &str) -> Result<(), HostError> {
        self.files.insert(String::from(path), Vec::new());
        Ok(())
    }

    fn read(&self, path: &str, offset: u64, len: u64) -> Result<Vec<u8>, HostError> {
        let data = self
            .files
            .get(path)
            .ok_or_else(|| HostError::Io(alloc::format!("no such file `{path}`")))?;
        let start = (offset as usize).min(data.len());
        let end = (offset.saturating_add(len) as usize).min(data.len());
        Ok(data[start..end].to_vec())
    }

    fn write(&mut self, path: &str, offset: u64, data: &[u8]) -> Result<(), HostError> {
        let file = self
            .files
            .get_mut(path)
            .ok_or_else(|| HostError::Io(alloc::format!("no such file `{path}`")))?;
        let off = offset as usize;
        if file.len() < off {
            file.resize(off, 0);
        }
        let end = off + data.len();
        if file.len() < end {
            file.resize(end, 0);
        }
        file[off..end].copy_from_slice(data);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memfs_write_extends() {
        let mut fs = MemFs::new();
        fs.create("x").unwrap();
        fs.write("x", 0, b"hello").unwrap();
        fs.write("x", 5, b" world").unwrap();
        assert_eq!(fs.read_all("x").unwrap(), b"hello world");
    }

    #[test]
    fn open_modes() {
        let mut fs = MemFs::new();
        assert!(open_with_mode(&mut fs, "x", "r").is_err());
        assert_eq!(open_with_mode(&mut fs, "x", "w").unwrap(), 0);
        fs.write("x", 0, b"abc").unwrap();
        assert_eq!(open_with_mode(&mut fs, "x", "a").unwrap(), 3);
        assert_eq!(open_with_mode(&mut fs, "x", "r+").unwrap(), 0);
        assert!(open_with_mode(&mut fs, "x", "q").is_err());
    }
}
