//! Raw field snapshot format: 32-byte header (magic "HSAVFLD1", Nx, Ny as
//! little-endian u32, Lx, Ly as little-endian f64) followed by the node
//! values as little-endian f64 in row-major (x-major) order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::spectral::{Field, Grid2D};

pub const MAGIC: &[u8; 8] = b"HSAVFLD1";

pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    let grid = field.grid();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(grid.nx() as u32).to_le_bytes())?;
    w.write_all(&(grid.ny() as u32).to_le_bytes())?;
    w.write_all(&grid.lx().to_le_bytes())?;
    w.write_all(&grid.ly().to_le_bytes())?;
    for v in field.values().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<Field> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::SnapshotFormat(format!(
            "bad magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let nx = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let ny = u32::from_le_bytes(u32buf) as usize;
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf)?;
    let lx = f64::from_le_bytes(f64buf);
    r.read_exact(&mut f64buf)?;
    let ly = f64::from_le_bytes(f64buf);
    let grid = Grid2D::new(nx, ny, lx, ly)?;

    let mut values = Vec::with_capacity(nx * ny);
    for _ in 0..nx * ny {
        r.read_exact(&mut f64buf)?;
        values.push(f64::from_le_bytes(f64buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::SnapshotFormat(format!(
            "trailing bytes after {} values in {}",
            nx * ny,
            path.display()
        )));
    }
    let array = Array2::from_shape_vec((nx, ny), values)
        .map_err(|e| Error::SnapshotFormat(e.to_string()))?;
    Field::from_values(grid, array)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_bits() {
        let grid = Grid2D::new(8, 6, 2.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut field = Field::zeros(grid);
        field.values_mut().mapv_inplace(|_| rng.gen_range(-1.0..1.0));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.fld");
        write_field(&path, &field).unwrap();

        let meta = std::fs::metadata(&path).unwrap();
        assert_eq!(meta.len(), 32 + 8 * 48);

        let back = read_field(&path).unwrap();
        assert_eq!(back.grid(), field.grid());
        for (a, b) in back.values().iter().zip(field.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fld");
        std::fs::write(&path, b"NOTAFLD1rest").unwrap();
        assert!(read_field(&path).is_err());
    }
}
