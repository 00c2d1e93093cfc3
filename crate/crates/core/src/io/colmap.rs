//! COLMAP text export: `cameras.txt`, `images.txt`, `points3D.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::SparsePoint;
use crate::error::{Error, Result};
use crate::scene::CameraView;

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapCamera {
    pub id: u32,
    pub model: String,
    pub width: usize,
    pub height: usize,
    pub params: Vec<f64>,
}

impl ColmapCamera {
    pub fn pinhole(id: u32, width: usize, height: usize, intrinsics: [f64; 4]) -> Self {
        Self {
            id,
            model: "PINHOLE".into(),
            width,
            height,
            params: intrinsics.to_vec(),
        }
    }

    /// `[fx, fy, cx, cy]` for the supported models.
    pub fn intrinsics(&self) -> Result<[f64; 4]> {
        match (self.model.as_str(), self.params.as_slice()) {
            ("PINHOLE", &[fx, fy, cx, cy]) => Ok([fx, fy, cx, cy]),
            ("SIMPLE_PINHOLE", &[f, cx, cy]) => Ok([f, f, cx, cy]),
            ("PINHOLE" | "SIMPLE_PINHOLE", p) => Err(Error::InvalidParameter(format!(
                "camera {}: {} takes {} parameters, got {}",
                self.id,
                self.model,
                if self.model == "PINHOLE" { 4 } else { 3 },
                p.len()
            ))),
            _ => Err(Error::UnsupportedCameraModel(self.model.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub id: u32,
    /// World-to-camera rotation `(qw, qx, qy, qz)`.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColmapModel {
    pub cameras: BTreeMap<u32, ColmapCamera>,
    /// In file order.
    pub images: Vec<ColmapImage>,
    pub points: Vec<SparsePoint>,
}

impl ColmapModel {
    pub fn camera_view(&self, image: &ColmapImage) -> Result<CameraView> {
        let cam = self.cameras.get(&image.camera_id).ok_or_else(|| {
            Error::Dataset(format!("image {} references unknown camera {}", image.name, image.camera_id))
        })?;
        CameraView::from_quaternion(cam.intrinsics()?, cam.width, cam.height, image.qvec, image.tvec)
    }

    /// No sparse points: training has to seed splats randomly.
    pub fn needs_random_init(&self) -> bool {
        self.points.is_empty()
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-comment lines with their 1-based line numbers; blank lines are kept.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, tokens: &[&str], k: usize, what: &str) -> Result<T> {
    let tok = tokens
        .get(k)
        .ok_or_else(|| Error::parse(path, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(path, line, format!("cannot parse {what} from `{tok}`")))
}

pub fn parse_cameras(path: &Path, text: &str) -> Result<BTreeMap<u32, ColmapCamera>> {
    let mut out = BTreeMap::new();
    for (n, line) in content_lines(text) {
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        let cam = ColmapCamera {
            id: field(path, n, &t, 0, "CAMERA_ID")?,
            model: t.get(1).ok_or_else(|| Error::parse(path, n, "missing MODEL"))?.to_string(),
            width: field(path, n, &t, 2, "WIDTH")?,
            height: field(path, n, &t, 3, "HEIGHT")?,
            params: (4..t.len())
                .map(|k| field(path, n, &t, k, "PARAMS"))
                .collect::<Result<_>>()?,
        };
        cam.intrinsics()?;
        if out.insert(cam.id, cam).is_some() {
            return Err(Error::parse(path, n, "duplicate CAMERA_ID"));
        }
    }
    Ok(out)
}

/// Each image takes two lines; the second lists 2D observations and may be
/// blank or missing at the end of the file.
pub fn parse_images(path: &Path, text: &str) -> Result<Vec<ColmapImage>> {
    let mut out = Vec::new();
    let mut lines = content_lines(text).peekable();
    while let Some((n, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 10 {
            return Err(Error::parse(path, n, format!("expected 10 fields, got {}", t.len())));
        }
        let f = |k: usize, what: &str| field::<f64>(path, n, &t, k, what);
        out.push(ColmapImage {
            id: field(path, n, &t, 0, "IMAGE_ID")?,
            qvec: [f(1, "QW")?, f(2, "QX")?, f(3, "QY")?, f(4, "QZ")?],
            tvec: [f(5, "TX")?, f(6, "TY")?, f(7, "TZ")?],
            camera_id: field(path, n, &t, 8, "CAMERA_ID")?,
            // Names may contain spaces.
            name: t[9..].join(" "),
        });
        lines.next();
    }
    Ok(out)
}

pub fn parse_points(path: &Path, text: &str) -> Result<Vec<SparsePoint>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 8 {
            return Err(Error::parse(path, n, format!("expected at least 8 fields, got {}", t.len())));
        }
        let _: u64 = field(path, n, &t, 0, "POINT3D_ID")?;
        let position = [field(path, n, &t, 1, "X")?, field(path, n, &t, 2, "Y")?, field(path, n, &t, 3, "Z")?];
        let rgb: [u8; 3] = [field(path, n, &t, 4, "R")?, field(path, n, &t, 5, "G")?, field(path, n, &t, 6, "B")?];
        out.push(SparsePoint {
            position,
            color: rgb.map(|c| c as f64 / 255.0),
        });
    }
    Ok(out)
}

pub fn load_colmap_text(dir: &Path) -> Result<ColmapModel> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("{} is not a COLMAP text directory", dir.display())));
    }
    let cam_path = dir.join("cameras.txt");
    let img_path = dir.join("images.txt");
    let pts_path = dir.join("points3D.txt");
    let model = ColmapModel {
        cameras: parse_cameras(&cam_path, &read(&cam_path)?)?,
        images: parse_images(&img_path, &read(&img_path)?)?,
        points: parse_points(&pts_path, &read(&pts_path)?)?,
    };
    for im in &model.images {
        if !model.cameras.contains_key(&im.camera_id) {
            return Err(Error::Dataset(format!("image {} references unknown camera {}", im.name, im.camera_id)));
        }
    }
    Ok(model)
}

pub fn write_colmap_text(dir: &Path, model: &ColmapModel) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cams = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    writeln!(cams, "# Number of cameras: {}", model.cameras.len()).unwrap();
    for c in model.cameras.values() {
        write!(cams, "{} {} {} {}", c.id, c.model, c.width, c.height).unwrap();
        for p in &c.params {
            write!(cams, " {p}").unwrap();
        }
        cams.push('\n');
    }
    let mut imgs = String::from(
        "# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    writeln!(imgs, "# Number of images: {}", model.images.len()).unwrap();
    for im in &model.images {
        let [qw, qx, qy, qz] = im.qvec;
        let [tx, ty, tz] = im.tvec;
        writeln!(imgs, "{} {qw} {qx} {qy} {qz} {tx} {ty} {tz} {} {}\n", im.id, im.camera_id, im.name).unwrap();
    }
    let mut pts = String::from(
        "# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n",
    );
    writeln!(pts, "# Number of points: {}", model.points.len()).unwrap();
    for (i, p) in model.points.iter().enumerate() {
        let [x, y, z] = p.position;
        let [r, g, b] = p.color.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
        writeln!(pts, "{} {x} {y} {z} {r} {g} {b} 0", i + 1).unwrap();
    }
    for (name, text) in [("cameras.txt", cams), ("images.txt", imgs), ("points3D.txt", pts)] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
