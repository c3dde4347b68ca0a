//! Text formats: scene meshes, camera sets and ASCII PLY point clouds.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Matrix3;

use super::camera::Camera;
use super::cloud::PointCloud;
use super::mesh::TriangleMesh;
use super::Vec3;
use crate::error::{Error, Result};

const SCENE_MAGIC: &str = "drdf-scene";
const CAMERAS_MAGIC: &str = "drdf-cameras";
const FORMAT_VERSION: u32 = 1;

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Whitespace token stream with line-aware error context.
struct Tokens<'a> {
    context: &'a str,
    iter: std::iter::Peekable<Box<dyn Iterator<Item = &'a str> + 'a>>,
}

impl<'a> Tokens<'a> {
    fn new(context: &'a str, text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = &'a str> + 'a> =
            Box::new(text.lines().filter(|l| !l.trim_start().starts_with('#')).flat_map(str::split_whitespace));
        Tokens {
            context,
            iter: it.peekable(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        self.iter
            .next()
            .ok_or_else(|| Error::parse(self.context, "unexpected end of input"))
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let got = self.next()?;
        if got != word {
            return Err(Error::parse(self.context, format!("expected `{word}`, found `{got}`")));
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&mut self) -> Result<T> {
        let tok = self.next()?;
        tok.parse()
            .map_err(|_| Error::parse(self.context, format!("cannot parse `{tok}`")))
    }

    fn version(&mut self, magic: &str) -> Result<()> {
        self.expect(magic)?;
        let v: u32 = self.parse()?;
        if v != FORMAT_VERSION {
            return Err(Error::parse(self.context, format!("unsupported version {v}")));
        }
        Ok(())
    }
}

pub fn scene_to_string(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{SCENE_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(s, "vertices {}", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    let labelled = mesh.labels.is_some();
    let _ = writeln!(
        s,
        "triangles {} {}",
        mesh.triangles.len(),
        if labelled { "labels" } else { "nolabels" }
    );
    for (i, t) in mesh.triangles.iter().enumerate() {
        match &mesh.labels {
            Some(l) => {
                let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], l[i]);
            }
            None => {
                let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
            }
        }
    }
    s.push_str("end\n");
    s
}

pub fn scene_from_str(text: &str) -> Result<TriangleMesh> {
    let mut tok = Tokens::new("scene", text);
    tok.version(SCENE_MAGIC)?;
    tok.expect("vertices")?;
    let nv: usize = tok.parse()?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push(Vec3::new(tok.parse()?, tok.parse()?, tok.parse()?));
    }
    tok.expect("triangles")?;
    let nt: usize = tok.parse()?;
    let labelled = match tok.next()? {
        "labels" => true,
        "nolabels" => false,
        other => return Err(Error::parse("scene", format!("unknown label flag `{other}`"))),
    };
    let mut triangles = Vec::with_capacity(nt);
    let mut labels = labelled.then(|| Vec::with_capacity(nt));
    for _ in 0..nt {
        triangles.push([tok.parse()?, tok.parse()?, tok.parse()?]);
        if let Some(l) = labels.as_mut() {
            l.push(tok.parse()?);
        }
    }
    tok.expect("end")?;
    TriangleMesh::new(vertices, triangles, labels)
}

pub fn write_scene(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    fs::write(path, scene_to_string(mesh))?;
    Ok(())
}

pub fn read_scene(path: &Path) -> Result<TriangleMesh> {
    scene_from_str(&read_to_string(path)?)
}

pub fn camera_to_line(cam: &Camera) -> String {
    let r = &cam.rotation;
    let mut s = format!("{} {} {}", cam.width, cam.height, cam.fov_x);
    for i in 0..3 {
        for j in 0..3 {
            let _ = write!(s, " {}", r[(i, j)]);
        }
    }
    let t = &cam.translation;
    let _ = write!(s, " {} {} {} {} {}", t.x, t.y, t.z, cam.near, cam.far);
    s
}

fn camera_from_tokens(tok: &mut Tokens<'_>) -> Result<Camera> {
    let width = tok.parse()?;
    let height = tok.parse()?;
    let fov_x = tok.parse()?;
    let mut r = [0.0; 9];
    for v in r.iter_mut() {
        *v = tok.parse()?;
    }
    let t = Vec3::new(tok.parse()?, tok.parse()?, tok.parse()?);
    let near = tok.parse()?;
    let far = tok.parse()?;
    Camera::new(width, height, fov_x, Matrix3::from_row_slice(&r), t, near, far)
}

pub fn camera_from_line(line: &str) -> Result<Camera> {
    camera_from_tokens(&mut Tokens::new("camera", line))
}

pub fn cameras_to_string(cameras: &[Camera]) -> String {
    let mut s = format!("{CAMERAS_MAGIC} {FORMAT_VERSION}\ncount {}\n", cameras.len());
    for c in cameras {
        s.push_str(&camera_to_line(c));
        s.push('\n');
    }
    s
}

pub fn cameras_from_str(text: &str) -> Result<Vec<Camera>> {
    let mut tok = Tokens::new("cameras", text);
    tok.version(CAMERAS_MAGIC)?;
    tok.expect("count")?;
    let n: usize = tok.parse()?;
    (0..n).map(|_| camera_from_tokens(&mut tok)).collect()
}

pub fn write_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    fs::write(path, cameras_to_string(cameras))?;
    Ok(())
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    cameras_from_str(&read_to_string(path)?)
}

/// ASCII PLY with `x y z nx ny nz` and, when present, an integer `camera` property.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         property double nx\nproperty double ny\nproperty double nz\n",
        cloud.len()
    )?;
    if cloud.cameras.is_some() {
        writeln!(out, "property int camera")?;
    }
    writeln!(out, "end_header")?;
    for (i, (p, n)) in cloud.points.iter().zip(&cloud.normals).enumerate() {
        write!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?;
        if let Some(c) = &cloud.cameras {
            write!(out, " {}", c[i])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn ply_from_str(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::parse("ply", "missing magic"));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    for line in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(Error::parse("ply", format!("unsupported format {other}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| Error::parse("ply", "bad vertex count"))?)
            }
            ["property", _, name] => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::parse("ply", "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::parse("ply", "missing x/y/z properties")),
    };
    let normal_cols = (col("nx"), col("ny"), col("nz"));
    let cam_col = col("camera");
    let mut cloud = PointCloud {
        cameras: cam_col.map(|_| Vec::with_capacity(count)),
        ..Default::default()
    };
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| Error::parse("ply", "truncated body"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| Error::parse("ply", format!("bad value `{w}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != props.len() {
            return Err(Error::parse("ply", "row length differs from header"));
        }
        cloud.points.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
        cloud.normals.push(match normal_cols {
            (Some(a), Some(b), Some(c)) => Vec3::new(vals[a], vals[b], vals[c]),
            _ => Vec3::zeros(),
        });
        if let (Some(c), Some(cams)) = (cam_col, cloud.cameras.as_mut()) {
            cams.push(vals[c] as u32);
        }
    }
    Ok(cloud)
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    ply_from_str(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::testing::random_soup;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scene_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mesh = random_soup(&mut rng, 40);
        assert_eq!(scene_from_str(&scene_to_string(&mesh)).unwrap(), mesh);
        mesh.labels = Some((0..40).collect());
        assert_eq!(scene_from_str(&scene_to_string(&mesh)).unwrap(), mesh);
    }

    #[test]
    fn scene_parse_errors() {
        assert!(matches!(scene_from_str("drdf-scene 2\n"), Err(Error::Parse { .. })));
        assert!(scene_from_str("drdf-scene 1\nvertices 1\n0 0\n").is_err());
        let bad_index = "drdf-scene 1\nvertices 3\n0 0 0\n1 0 0\n0 1 0\ntriangles 1 nolabels\n0 1 5\nend\n";
        assert!(matches!(scene_from_str(bad_index), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn ply_round_trip_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let mut cloud = PointCloud::default();
        cloud.push(Vec3::new(1.0, 2.0, 3.5), Vec3::new(0.0, 0.0, -1.0), Some(0));
        cloud.push(Vec3::new(-1.25, 0.1, 7.0), Vec3::new(0.0, 1.0, 0.0), Some(2));
        write_ply(&path, &cloud).unwrap();
        assert_eq!(read_ply(&path).unwrap(), cloud);
        assert!(matches!(read_ply(&dir.path().join("missing.ply")), Err(Error::NotFound(_))));
    }

    proptest! {
        #[test]
        fn camera_lines_round_trip(yaw in -3.1f64..3.1, pitch in -1.0f64..0.0, x in -5.0f64..5.0, y in 0.5f64..2.0) {
            let eye = Vec3::new(x, y, 0.3);
            let target = eye + Vec3::new(yaw.sin(), pitch.tan(), yaw.cos());
            let cam = Camera::look_at(64, 48, 63.4, eye, target, Vec3::y(), 0.0, 8.0).unwrap();
            let back = cameras_from_str(&cameras_to_string(&[cam.clone(), cam.clone()])).unwrap();
            prop_assert_eq!(back, vec![cam.clone(), cam]);
        }
    }
}
