//! Binary file formats.
//!
//! All formats are little-endian with an 8-byte ASCII magic:
//!
//! - `CIMG1` (magic `CIMG0001`): u32 D, then D u32 dims, then N complex
//!   values as interleaved f64 (re, im), row-major with dimension 1
//!   fastest. Multi-coil sensitivity maps are stored as a *stack*: N_c
//!   consecutive `CIMG1` records in one file.
//! - `TRAJ1` (magic `TRAJ0001`): u32 D, u32 n_shots, u32 samples_per_shot,
//!   f64 dwell time in ms, then M x D f64 sample-major coordinates.
//! - `FLDT1` (magic `FLDT0001`): u32 rows, u32 cols, then rows x cols
//!   complex f64, row-major. Used for both off-resonance tables
//!   (`b`: M x L, `c`: L x N).
//! - `KSPC1` (magic `KSPC0001`): u32 M, u32 n_coils, then M x N_c complex
//!   f64, coil-major (coil blocks contiguous).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::grid::{ComplexImage, ImageGrid, KspaceData, Trajectory};
use crate::{Error, Result};

pub const CIMG_MAGIC: &[u8; 8] = b"CIMG0001";
pub const TRAJ_MAGIC: &[u8; 8] = b"TRAJ0001";
pub const FLDT_MAGIC: &[u8; 8] = b"FLDT0001";
pub const KSPC_MAGIC: &[u8; 8] = b"KSPC0001";

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8], what: &str) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(Error::Format(format!(
            "bad {what} magic: expected {:?}, got {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf)
        )));
    }
    Ok(())
}

fn write_complex_slice<W: Write>(w: &mut W, data: &[Complex64]) -> Result<()> {
    for v in data {
        write_f64(w, v.re)?;
        write_f64(w, v.im)?;
    }
    Ok(())
}

fn read_complex_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let re = read_f64(r)?;
        let im = read_f64(r)?;
        out.push(Complex64::new(re, im));
    }
    Ok(out)
}

pub fn write_cimg<W: Write>(w: &mut W, image: &ComplexImage) -> Result<()> {
    w.write_all(CIMG_MAGIC)?;
    write_u32(w, image.grid.ndim() as u32)?;
    for &d in image.grid.dims() {
        write_u32(w, d as u32)?;
    }
    write_complex_slice(w, &image.data)
}

pub fn read_cimg<R: Read>(r: &mut R) -> Result<ComplexImage> {
    expect_magic(r, CIMG_MAGIC, "CIMG1")?;
    let ndim = read_u32(r)? as usize;
    if ndim == 0 || ndim > crate::grid::MAX_DIMS {
        return Err(Error::Format(format!("CIMG1 dimensionality {ndim} unsupported")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(read_u32(r)? as usize);
    }
    let grid = ImageGrid::new(&dims).map_err(|e| Error::Format(e.to_string()))?;
    let data = read_complex_vec(r, grid.len())?;
    ComplexImage::new(grid, data)
}

pub fn save_cimg(path: &Path, image: &ComplexImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cimg(&mut w, image)?;
    w.flush()?;
    Ok(())
}

pub fn load_cimg(path: &Path) -> Result<ComplexImage> {
    read_cimg(&mut BufReader::new(File::open(path)?))
}

/// Writes a stack of images (for example coil sensitivity maps) as
/// consecutive `CIMG1` records.
pub fn save_cimg_stack(path: &Path, images: &[ComplexImage]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for img in images {
        write_cimg(&mut w, img)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads consecutive `CIMG1` records until end of file.
pub fn load_cimg_stack(path: &Path) -> Result<Vec<ComplexImage>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    loop {
        let mut probe = [0u8; 1];
        match r.read(&mut probe)? {
            0 => break,
            _ => {
                let mut rest = [0u8; 7];
                r.read_exact(&mut rest)?;
                let mut magic = [0u8; 8];
                magic[0] = probe[0];
                magic[1..].copy_from_slice(&rest);
                if &magic != CIMG_MAGIC {
                    return Err(Error::Format("bad CIMG1 magic inside stack".into()));
                }
                let ndim = read_u32(&mut r)? as usize;
                let mut dims = Vec::with_capacity(ndim);
                for _ in 0..ndim {
                    dims.push(read_u32(&mut r)? as usize);
                }
                let grid = ImageGrid::new(&dims).map_err(|e| Error::Format(e.to_string()))?;
                let data = read_complex_vec(&mut r, grid.len())?;
                out.push(ComplexImage::new(grid, data)?);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Format("empty CIMG1 stack".into()));
    }
    Ok(out)
}

pub fn write_traj<W: Write>(w: &mut W, traj: &Trajectory) -> Result<()> {
    w.write_all(TRAJ_MAGIC)?;
    write_u32(w, traj.ndim() as u32)?;
    write_u32(w, traj.n_shots() as u32)?;
    write_u32(w, traj.samples_per_shot() as u32)?;
    write_f64(w, traj.dwell_ms())?;
    for &v in traj.omega_flat() {
        write_f64(w, v)?;
    }
    Ok(())
}

pub fn read_traj<R: Read>(r: &mut R) -> Result<Trajectory> {
    expect_magic(r, TRAJ_MAGIC, "TRAJ1")?;
    let ndim = read_u32(r)? as usize;
    let n_shots = read_u32(r)? as usize;
    let spp = read_u32(r)? as usize;
    let dwell = read_f64(r)?;
    let m = n_shots
        .checked_mul(spp)
        .and_then(|m| m.checked_mul(ndim))
        .ok_or_else(|| Error::Format("TRAJ1 size overflow".into()))?;
    let mut omega = Vec::with_capacity(m);
    for _ in 0..m {
        omega.push(read_f64(r)?);
    }
    Trajectory::new(omega, ndim, n_shots, spp, dwell)
}

pub fn save_traj(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_traj(&mut w, traj)?;
    w.flush()?;
    Ok(())
}

pub fn load_traj(path: &Path) -> Result<Trajectory> {
    read_traj(&mut BufReader::new(File::open(path)?))
}

/// Writes a complex table with a `FLDT1` header.
pub fn save_field_table(path: &Path, rows: usize, cols: usize, data: &[Complex64]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "field table expects {rows}x{cols} entries, got {}",
            data.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FLDT_MAGIC)?;
    write_u32(&mut w, rows as u32)?;
    write_u32(&mut w, cols as u32)?;
    write_complex_slice(&mut w, data)?;
    w.flush()?;
    Ok(())
}

/// Reads a `FLDT1` table, returning `(rows, cols, data)`.
pub fn load_field_table(path: &Path) -> Result<(usize, usize, Vec<Complex64>)> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, FLDT_MAGIC, "FLDT1")?;
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let data = read_complex_vec(&mut r, rows * cols)?;
    Ok((rows, cols, data))
}

pub fn save_kspace(path: &Path, ksp: &KspaceData) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(KSPC_MAGIC)?;
    write_u32(&mut w, ksp.m() as u32)?;
    write_u32(&mut w, ksp.n_coils() as u32)?;
    write_complex_slice(&mut w, ksp.samples())?;
    w.flush()?;
    Ok(())
}

pub fn load_kspace(path: &Path) -> Result<KspaceData> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, KSPC_MAGIC, "KSPC1")?;
    let m = read_u32(&mut r)? as usize;
    let n_coils = read_u32(&mut r)? as usize;
    let data = read_complex_vec(&mut r, m * n_coils)?;
    KspaceData::new(data, m, n_coils)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, dims: &[usize]) -> ComplexImage {
        let grid = ImageGrid::new(dims).unwrap();
        let data = (0..grid.len())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ComplexImage::new(grid, data).unwrap()
    }

    #[test]
    fn cimg_roundtrip_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dir = tempfile::tempdir().unwrap();
        for dims in [vec![5], vec![4, 6], vec![3, 2, 4]] {
            let img = random_image(&mut rng, &dims);
            let path = dir.path().join("img.cimg");
            save_cimg(&path, &img).unwrap();
            let back = load_cimg(&path).unwrap();
            assert_eq!(img, back);
        }
    }

    #[test]
    fn cimg_bytes_are_exact_layout() {
        let grid = ImageGrid::new(&[2, 1]).unwrap();
        let img = ComplexImage::new(
            grid,
            vec![Complex64::new(1.0, -2.0), Complex64::new(3.0, 4.0)],
        )
        .unwrap();
        let mut bytes = Vec::new();
        write_cimg(&mut bytes, &img).unwrap();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"CIMG0001");
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        for v in [1.0f64, -2.0, 3.0, 4.0] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expect);
    }

    #[test]
    fn traj_roundtrip_and_magic_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let omega: Vec<f64> = (0..2 * 6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let traj = Trajectory::new(omega, 2, 2, 3, 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.traj");
        save_traj(&path, &traj).unwrap();
        assert_eq!(load_traj(&path).unwrap(), traj);

        // Corrupt the magic.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match load_traj(&path) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn stack_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let imgs: Vec<_> = (0..3).map(|_| random_image(&mut rng, &[4, 4])).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("maps.cimg");
        save_cimg_stack(&path, &imgs).unwrap();
        assert_eq!(load_cimg_stack(&path).unwrap(), imgs);
    }

    #[test]
    fn field_table_and_kspace_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dir = tempfile::tempdir().unwrap();

        let data: Vec<Complex64> = (0..6)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let path = dir.path().join("b.fldt");
        save_field_table(&path, 2, 3, &data).unwrap();
        let (r, c, back) = load_field_table(&path).unwrap();
        assert_eq!((r, c), (2, 3));
        assert_eq!(back, data);

        let ksp = KspaceData::new(data.clone(), 3, 2).unwrap();
        let kpath = dir.path().join("y.kspc");
        save_kspace(&kpath, &ksp).unwrap();
        assert_eq!(load_kspace(&kpath).unwrap(), ksp);
    }
}
