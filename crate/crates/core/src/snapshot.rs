//! Binary and CSV persistence of fields.
//!
//! Binary snapshot layout (all little-endian):
//!
//! | offset | size | content                         |
//! |--------|------|---------------------------------|
//! | 0      | 8    | magic `b"ZKFIELD\0"`            |
//! | 8      | 4    | format version (`u32`, = 1)     |
//! | 12     | 4    | reserved, zero                  |
//! | 16     | 8    | `nx` (`u64`)                    |
//! | 24     | 8    | `ny` (`u64`)                    |
//! | 32     | 8    | `lx` (`f64`)                    |
//! | 40     | 8    | `ly` (`f64`)                    |
//! | 48     | 8·nx·ny | samples (`f64`), `x` fastest |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::grid::{Grid, GridError, RealField, Result};

pub const MAGIC: [u8; 8] = *b"ZKFIELD\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 48;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GridError + '_ {
    move |source| GridError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode(field: &RealField) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(g.nx() as u64).to_le_bytes());
    out.extend_from_slice(&(g.ny() as u64).to_le_bytes());
    out.extend_from_slice(&g.lx().to_le_bytes());
    out.extend_from_slice(&g.ly().to_le_bytes());
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<RealField> {
    if bytes.len() < HEADER_LEN {
        return Err(GridError::Format(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[..8] != MAGIC {
        return Err(GridError::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(GridError::Format(format!("unsupported version {version}")));
    }
    let (nx, ny) = (u64_at(16) as usize, u64_at(24) as usize);
    let grid = Grid::new(nx, ny, f64_at(32), f64_at(40))?;
    let expected = HEADER_LEN + 8 * grid.len();
    if bytes.len() != expected {
        return Err(GridError::Format(format!(
            "expected {expected} bytes for a {nx}x{ny} field, found {}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    RealField::new(&grid, data)
}

pub fn write_snapshot(path: &Path, field: &RealField) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    w.write_all(&encode(field)).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_snapshot(path: &Path) -> Result<RealField> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut bytes = Vec::new();
    BufReader::new(f)
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    decode(&bytes)
}

/// CSV export for small fields: a `#` header line with the grid, then
/// `x,y,u` rows in storage order.
pub fn write_csv(path: &Path, field: &RealField) -> Result<()> {
    let g = field.grid();
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut body = format!(
        "# nx={},ny={},lx={},ly={}\nx,y,u\n",
        g.nx(),
        g.ny(),
        g.lx(),
        g.ly()
    );
    for iy in 0..g.ny() {
        for ix in 0..g.nx() {
            body.push_str(&format!("{},{},{:e}\n", g.x(ix), g.y(iy), field.at(ix, iy)));
        }
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip(seed in 0u64..1000, lx in 1.0f64..100.0) {
            let g = Grid::new(16, 18, lx, 2.5).unwrap();
            let data: Vec<f64> = (0..g.len()).map(|i| ((i as u64 * 7919 + seed) as f64).sin() * 1e3).collect();
            let f = RealField::new(&g, data).unwrap();
            let back = decode(&encode(&f)).unwrap();
            prop_assert_eq!(back, f);
        }
    }

    #[test]
    fn header_layout() {
        let g = Grid::new(16, 16, 3.0, 4.0).unwrap();
        let b = encode(&RealField::constant(&g, 1.0));
        assert_eq!(&b[..8], b"ZKFIELD\0");
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 16);
        assert_eq!(f64::from_le_bytes(b[40..48].try_into().unwrap()), 4.0);
        assert_eq!(b.len(), HEADER_LEN + 8 * 256);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let g = Grid::new(16, 16, 3.0, 4.0).unwrap();
        let mut b = encode(&RealField::constant(&g, 1.0));
        assert!(decode(&b[..b.len() - 8]).is_err());
        b[0] = b'X';
        assert!(decode(&b).is_err());
    }

    #[test]
    fn file_roundtrip_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(16, 16, 3.0, 4.0).unwrap();
        let f = RealField::from_fn(&g, |x, y| x * y).unwrap();
        let p = dir.path().join("f.zkf");
        write_snapshot(&p, &f).unwrap();
        assert_eq!(read_snapshot(&p).unwrap(), f);
        let c = dir.path().join("f.csv");
        write_csv(&c, &f).unwrap();
        let text = std::fs::read_to_string(c).unwrap();
        assert!(text.starts_with("# nx=16,ny=16,lx=3,ly=4\nx,y,u\n"));
        assert_eq!(text.lines().count(), 2 + 256);
        assert!(read_snapshot(&dir.path().join("missing")).is_err());
    }
}
