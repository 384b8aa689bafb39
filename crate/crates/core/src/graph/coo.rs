use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Integer-valued sparse matrix in coordinate form. Text layout: a header
/// line `%coo<TAB>rows<TAB>cols<TAB>nnz` followed by `row<TAB>col<TAB>value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(usize, usize, u64)>,
}

impl CooMatrix {
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%coo\t{}\t{}\t{}", self.n_rows, self.n_cols, self.entries.len())?;
        for &(r, c, v) in &self.entries {
            writeln!(w, "{r}\t{c}\t{v}")?;
        }
        w.flush()
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty coordinate file".into()))?
            .map_err(|e| Error::Format(e.to_string()))?;
        let h: Vec<&str> = header.split('\t').collect();
        if h.len() != 4 || h[0] != "%coo" {
            return Err(Error::Format(format!("bad coordinate header {header:?}")));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad number {s:?}")));
        let (n_rows, n_cols, nnz) = (parse(h[1])?, parse(h[2])?, parse(h[3])?);
        let mut entries = Vec::with_capacity(nnz);
        for line in lines {
            let line = line.map_err(|e| Error::Format(e.to_string()))?;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::Format(format!("bad coordinate line {line:?}")));
            }
            let (r, c) = (parse(f[0])?, parse(f[1])?);
            let v = f[2]
                .parse::<u64>()
                .map_err(|_| Error::Format(format!("bad value {:?}", f[2])))?;
            if r >= n_rows || c >= n_cols {
                return Err(Error::Format(format!("coordinate ({r},{c}) out of range")));
            }
            entries.push((r, c, v));
        }
        if entries.len() != nnz {
            return Err(Error::Format(format!(
                "header declares {nnz} entries, found {}",
                entries.len()
            )));
        }
        Ok(Self {
            n_rows,
            n_cols,
            entries,
        })
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f))
    }
}
