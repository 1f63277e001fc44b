//! CSV and JSON emission.
//!
//! Floats are written with `{:?}`: the shortest decimal string that parses
//! back to the same value, switching to exponent notation for tiny and huge
//! magnitudes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::Failure;

/// One CSV cell.
pub enum Cell {
    F(f64),
    U(u64),
    B(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::F)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::U(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::U(x as u64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::B(x)
    }
}

pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: header.join(",") + "\n",
            width: header.len(),
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.width);
        for (k, cell) in cells.into_iter().enumerate() {
            if k > 0 {
                self.text.push(',');
            }
            let _ = match cell {
                Cell::F(x) => write!(self.text, "{x:?}"),
                Cell::U(x) => write!(self.text, "{x}"),
                Cell::B(x) => write!(self.text, "{x}"),
                Cell::Empty => Ok(()),
            };
        }
        self.text.push('\n');
    }
}

/// Tracks the files written into one output directory.
pub struct OutDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Failure::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, name: &str, csv: Csv) -> Result<(), Failure> {
        self.write(name, csv.text.as_bytes())
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

/// Formats a time for use in a file name.
pub fn time_tag(t: f64) -> String {
    format!("{t}").replace('-', "m")
}
