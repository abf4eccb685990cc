use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::mpm::MpmParticle;

pub const PARTICLE_MAGIC: [u8; 4] = *b"SDPD";
const VERSION: u32 = 1;
/// position, velocity (6 f64), mass, rest volume (2 f64), F row-major
/// (9 f64), plastic strain (1 f64), material (u32) and 4 padding bytes.
pub const PARTICLE_RECORD_BYTES: usize = 18 * 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleDump {
    pub time: f64,
    pub particles: Vec<MpmParticle>,
}

pub fn write_particles(particles: &[MpmParticle], time: f64, path: &Path) -> Result<()> {
    let mut w = super::create(path)?;
    let mut body = || -> std::io::Result<()> {
        w.write_all(&PARTICLE_MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(particles.len() as u64).to_le_bytes())?;
        w.write_all(&time.to_le_bytes())?;
        for p in particles {
            let mut fields = Vec::with_capacity(18);
            fields.extend(p.position.iter());
            fields.extend(p.velocity.iter());
            fields.push(p.mass);
            fields.push(p.rest_volume);
            for r in 0..3 {
                for c in 0..3 {
                    fields.push(p.deformation[(r, c)]);
                }
            }
            fields.push(p.plastic_strain);
            for v in fields {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&(p.material as u32).to_le_bytes())?;
            w.write_all(&[0u8; 4])?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn read_particles(path: &Path) -> Result<ParticleDump> {
    let mut r = super::open(path)?;
    let mut head = [0u8; 24];
    r.read_exact(&mut head).map_err(|_| Error::format(path, "truncated particle header"))?;
    if head[..4] != PARTICLE_MAGIC {
        return Err(Error::format(path, "not a particle dump (bad magic)"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported particle dump version {version}")));
    }
    let count = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
    let time = f64::from_le_bytes(head[16..24].try_into().expect("8 bytes"));
    let mut particles = Vec::with_capacity(count.min(1 << 24));
    let mut rec = [0u8; PARTICLE_RECORD_BYTES];
    for i in 0..count {
        r.read_exact(&mut rec)
            .map_err(|_| Error::format(path, format!("truncated at particle {i} of {count}")))?;
        let f = |k: usize| f64::from_le_bytes(rec[k * 8..k * 8 + 8].try_into().expect("8 bytes"));
        let deformation = Mat3::from_fn(|row, col| f(8 + row * 3 + col));
        particles.push(MpmParticle {
            position: Vec3::new(f(0), f(1), f(2)),
            velocity: Vec3::new(f(3), f(4), f(5)),
            mass: f(6),
            rest_volume: f(7),
            deformation,
            affine: Mat3::zeros(),
            velocity_gradient: Mat3::zeros(),
            plastic_strain: f(17),
            material: u32::from_le_bytes(rec[144..148].try_into().expect("4 bytes")) as usize,
        });
    }
    Ok(ParticleDump { time, particles })
}
