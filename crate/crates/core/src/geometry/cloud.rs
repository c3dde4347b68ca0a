use super::Vec3;

/// Points with optional normals and per-point source-camera provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub cameras: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        PointCloud {
            normals: vec![Vec3::zeros(); points.len()],
            points,
            cameras: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: Vec3, normal: Vec3, camera: Option<u32>) {
        self.points.push(point);
        self.normals.push(normal);
        match (&mut self.cameras, camera) {
            (Some(c), Some(k)) => c.push(k),
            (None, Some(k)) if self.points.len() == 1 => self.cameras = Some(vec![k]),
            (Some(_), None) | (None, Some(_)) => self.cameras = None,
            (None, None) => {}
        }
    }

    pub fn extend(&mut self, other: &PointCloud) {
        let was_empty = self.is_empty();
        self.points.extend_from_slice(&other.points);
        self.normals.extend_from_slice(&other.normals);
        self.cameras = match (self.cameras.take(), &other.cameras) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            (Some(a), None) if other.is_empty() => Some(a),
            _ => None,
        };
    }

    /// Keeps the points for which `keep` is true.
    pub fn filter(&self, mut keep: impl FnMut(usize, &Vec3) -> bool) -> PointCloud {
        let mut out = PointCloud {
            cameras: self.cameras.as_ref().map(|_| Vec::new()),
            ..Default::default()
        };
        for (i, p) in self.points.iter().enumerate() {
            if keep(i, p) {
                out.points.push(*p);
                out.normals.push(self.normals[i]);
                if let (Some(dst), Some(src)) = (&mut out.cameras, &self.cameras) {
                    dst.push(src[i]);
                }
            }
        }
        out
    }
}
