//! On-disk dataset layout:
//!
//! ```text
//! root/dataset.json              generation parameters
//! root/<split>/manifest.txt      one image id per line
//! root/<split>/<id>.png          8-bit grayscale image
//! root/<split>/<id>.json         {"id", "points", "boxes"}
//! root/<split>/<id>_iim.png      16-bit instance label map
//! root/<split>/<id>_iim.txt      instance count
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::scene::{scene_rng, synth_scene, Scene, SceneSpec};
use crate::error::{Error, Result};
use crate::labels::{iim_from_boxes, iim_from_points, Annotation, InstanceLabelMap};
use crate::numgrid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub scene: SceneSpec,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            train: 200,
            val: 50,
            test: 50,
        }
    }
}

impl DatasetSpec {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Scenes of one split, generated in memory. Scene `i` of a split depends only
/// on the seed, the split and `i`.
pub fn synth_split(spec: &SceneSpec, split: Split, n: usize) -> Result<Vec<Scene>> {
    (0..n)
        .map(|i| {
            let id = format!("{split}_{i:04}");
            synth_scene(spec, &id, &mut scene_rng(spec.seed, (split.stream() << 32) | i as u64))
        })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Quantizes to 8 bits.
pub fn write_gray_png(path: &Path, img: &Grid) -> Result<()> {
    let data: Vec<u8> = img
        .values()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    ImageBuffer::<Luma<u8>, _>::from_raw(img.width() as u32, img.height() as u32, data)
        .expect("buffer size matches")
        .save(path)
        .map_err(img_err(path))
}

/// Any image the decoder understands, converted to 8-bit luma in [0, 1].
pub fn read_gray_png(path: &Path) -> Result<Grid> {
    let img = image::open(path).map_err(img_err(path))?.into_luma8();
    let (w, h) = img.dimensions();
    Grid::new(h as usize, w as usize, img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
}

pub fn write_label_png(path: &Path, map: &InstanceLabelMap) -> Result<()> {
    if map.count() > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "{} instances do not fit a 16-bit label map",
            map.count()
        )));
    }
    let data: Vec<u16> = map.labels().iter().map(|&l| l as u16).collect();
    ImageBuffer::<Luma<u16>, _>::from_raw(map.width() as u32, map.height() as u32, data)
        .expect("buffer size matches")
        .save(path)
        .map_err(img_err(path))?;
    let sidecar = path.with_extension("txt");
    fs::write(&sidecar, format!("{}\n", map.count())).map_err(io_err(&sidecar))
}

pub fn read_label_png(path: &Path) -> Result<InstanceLabelMap> {
    let img = image::open(path).map_err(img_err(path))?.into_luma16();
    let (w, h) = img.dimensions();
    InstanceLabelMap::from_labels(h as usize, w as usize, img.into_raw().into_iter().map(u32::from).collect())
}

pub fn write_annotation(path: &Path, ann: &Annotation) -> Result<()> {
    let text = serde_json::to_string(ann).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_annotation(path: &Path) -> Result<Annotation> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn scene_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{id}.png")),
        dir.join(format!("{id}.json")),
        dir.join(format!("{id}_iim.png")),
    )
}

pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    let (img, ann, iim) = scene_paths(dir, &scene.annotation.id);
    write_gray_png(&img, &scene.image)?;
    write_annotation(&ann, &scene.annotation)?;
    write_label_png(&iim, &scene.gt)
}

/// Loads image and annotation; the label map is regenerated from the boxes
/// when its file is absent.
pub fn read_scene(dir: &Path, id: &str) -> Result<Scene> {
    let (img, ann, iim) = scene_paths(dir, id);
    let image = read_gray_png(&img)?;
    let annotation = read_annotation(&ann)?;
    annotation.validate(image.height(), image.width())?;
    let gt = if iim.exists() {
        read_label_png(&iim)?
    } else if annotation.has_boxes() || annotation.count() == 0 {
        iim_from_boxes(&annotation, image.height(), image.width())?
    } else {
        iim_from_points(&annotation, image.height(), image.width())?
    };
    if gt.shape() != image.shape() {
        return Err(Error::shape(
            "read_scene",
            format!("{}x{} label map", image.height(), image.width()),
            format!("{}x{}", gt.height(), gt.width()),
        ));
    }
    Ok(Scene { image, annotation, gt })
}

pub fn split_dir(root: &Path, split: Split) -> PathBuf {
    root.join(split.as_str())
}

/// Writes all splits, their manifests and `dataset.json`.
pub fn synth_dataset(root: &Path, spec: &DatasetSpec) -> Result<()> {
    spec.scene.validate()?;
    fs::create_dir_all(root).map_err(io_err(root))?;
    let meta = root.join("dataset.json");
    let text = serde_json::to_string_pretty(spec).expect("spec serializes");
    fs::write(&meta, text + "\n").map_err(io_err(&meta))?;
    for split in Split::ALL {
        let dir = split_dir(root, split);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let scenes = synth_split(&spec.scene, split, spec.count(split))?;
        let mut manifest = String::new();
        for s in &scenes {
            write_scene(&dir, s)?;
            manifest.push_str(&s.annotation.id);
            manifest.push('\n');
        }
        let mpath = dir.join("manifest.txt");
        fs::write(&mpath, manifest).map_err(io_err(&mpath))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn load_split(root: &Path, split: Split) -> Result<Vec<Scene>> {
    let dir = split_dir(root, split);
    read_manifest(&dir)?.iter().map(|id| read_scene(&dir, id)).collect()
}

/// Where label maps come from when regenerating them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Boxes,
    Points,
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boxes" => Ok(LabelSource::Boxes),
            "points" => Ok(LabelSource::Points),
            other => Err(Error::Config(format!("unknown label source `{other}`"))),
        }
    }
}

/// Regenerates `<id>_iim.png` and its count sidecar for every `<id>.json`
/// in `dir` that has a matching `<id>.png`. Returns the number of maps written.
pub fn generate_labels(dir: &Path, source: LabelSource) -> Result<usize> {
    let mut ids: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".json").map(String::from)
        })
        .filter(|id| dir.join(format!("{id}.png")).exists())
        .collect();
    ids.sort();
    for id in &ids {
        let (img, ann_path, iim) = scene_paths(dir, id);
        let (w, h) = image::image_dimensions(&img).map_err(img_err(&img))?;
        let (h, w) = (h as usize, w as usize);
        let ann = read_annotation(&ann_path)?;
        ann.validate(h, w)?;
        let map = match source {
            LabelSource::Boxes => iim_from_boxes(&ann, h, w)?,
            LabelSource::Points => iim_from_points(&ann, h, w)?,
        };
        write_label_png(&iim, &map)?;
    }
    Ok(ids.len())
}
