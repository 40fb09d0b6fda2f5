//! Graph persistence: binary little-endian container, magic "CGRF".
//!
//! Layout: magic, format version u32 = 1, n u64, entry count u64, then the
//! CSR arrays: n+1 offsets (u64), entry-count neighbor ids (u64), entry-count
//! weights (f64). Writing the same graph twice produces identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::KnnGraph;
use crate::error::{CoreError, Result};

pub const GRAPH_MAGIC: [u8; 4] = *b"CGRF";
pub const GRAPH_VERSION: u32 = 1;

pub fn save_graph(g: &KnnGraph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&GRAPH_MAGIC)?;
    w.write_u32::<LittleEndian>(GRAPH_VERSION)?;
    w.write_u64::<LittleEndian>(g.n as u64)?;
    w.write_u64::<LittleEndian>(g.entry_count() as u64)?;
    for &o in &g.offsets {
        w.write_u64::<LittleEndian>(o as u64)?;
    }
    for &v in &g.neighbors {
        w.write_u64::<LittleEndian>(v as u64)?;
    }
    for &x in &g.weights {
        w.write_f64::<LittleEndian>(x)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<KnnGraph> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| CoreError::Malformed {
        what: "graph file",
        detail: "file shorter than header".into(),
    })?;
    if magic != GRAPH_MAGIC {
        return Err(CoreError::BadMagic {
            what: "graph file",
            expected: GRAPH_MAGIC,
            found: magic,
        });
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != GRAPH_VERSION {
        return Err(CoreError::BadVersion {
            what: "graph file",
            expected: GRAPH_VERSION,
            found: version,
        });
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let entries = r.read_u64::<LittleEndian>()? as usize;
    let mut offsets = Vec::with_capacity(n + 1);
    for _ in 0..n + 1 {
        offsets.push(r.read_u64::<LittleEndian>().map_err(truncated)? as usize);
    }
    if offsets.first() != Some(&0) || offsets.last() != Some(&entries) {
        return Err(CoreError::Malformed {
            what: "graph file",
            detail: "offset array inconsistent with entry count".into(),
        });
    }
    if offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(CoreError::Malformed {
            what: "graph file",
            detail: "offsets not monotone".into(),
        });
    }
    let mut neighbors = Vec::with_capacity(entries);
    for _ in 0..entries {
        let v = r.read_u64::<LittleEndian>().map_err(truncated)?;
        if v >= n as u64 {
            return Err(CoreError::Malformed {
                what: "graph file",
                detail: format!("neighbor id {v} out of range for {n} nodes"),
            });
        }
        neighbors.push(v as u32);
    }
    let mut weights = Vec::with_capacity(entries);
    for _ in 0..entries {
        weights.push(r.read_f64::<LittleEndian>().map_err(truncated)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CoreError::Malformed {
            what: "graph file",
            detail: "trailing bytes after CSR arrays".into(),
        });
    }
    Ok(KnnGraph::from_csr(n, offsets, neighbors, weights, 0))
}

fn truncated(_: std::io::Error) -> CoreError {
    CoreError::Malformed {
        what: "graph file",
        detail: "truncated CSR payload".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::knn::symmetrize;
    use super::*;

    fn sample_graph() -> KnnGraph {
        symmetrize(&[
            vec![(1u32, 1.0), (2, 0.25)],
            vec![(0u32, 0.5)],
            vec![],
        ])
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.cgrf");
        let p2 = dir.path().join("b.cgrf");
        let g = sample_graph();
        save_graph(&g, &p1).unwrap();
        let loaded = load_graph(&p1).unwrap();
        assert_eq!(loaded.offsets, g.offsets);
        assert_eq!(loaded.neighbors, g.neighbors);
        assert_eq!(loaded.weights, g.weights);
        assert_eq!(loaded.total_weight_2m, g.total_weight_2m);
        save_graph(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_magic_and_version_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.cgrf");
        save_graph(&sample_graph(), &p).unwrap();

        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_graph(&p), Err(CoreError::BadMagic { .. })));

        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'C';
        bytes[4] = 9;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_graph(&p), Err(CoreError::BadVersion { .. })));
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.cgrf");
        save_graph(&sample_graph(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_graph(&p), Err(CoreError::Malformed { .. })));

        let mut extended = bytes.clone();
        extended.push(0);
        std::fs::write(&p, &extended).unwrap();
        assert!(matches!(load_graph(&p), Err(CoreError::Malformed { .. })));
    }
}
