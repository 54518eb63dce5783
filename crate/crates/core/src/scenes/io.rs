//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.json       {"seed","count","width","height","classes"}
//! <dir>/annotations.jsonl   {"id","file","objects":[{"class","box":[x0,y0,x1,y1]}]}
//! <dir>/images/NNNNNN.ppm   binary P6
//! ```
//!
//! Scene `i` has seed `derive_seed(manifest.seed, i)`, so seeds are not stored.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Annotation, Scene};
use crate::error::{Error, Result};
use crate::kernels::RoiBox;
use crate::raster::Image;
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub scenes: Vec<Scene>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    class: usize,
    #[serde(rename = "box")]
    bbox: [f32; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    id: usize,
    file: String,
    objects: Vec<ObjectRecord>,
}

fn image_file(id: usize) -> String {
    format!("images/{id:06}.ppm")
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    let m = &data.manifest;
    if m.count != data.scenes.len() {
        return Err(Error::invalid(
            "write dataset",
            format!("manifest count {} but {} scenes", m.count, data.scenes.len()),
        ));
    }
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let ann_path = dir.join("annotations.jsonl");
    let file = fs::File::create(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut out = BufWriter::new(file);
    for (id, scene) in data.scenes.iter().enumerate() {
        if scene.scene_seed != derive_seed(m.seed, id as u64) {
            return Err(Error::invalid(
                "write dataset",
                format!("scene {id} seed does not derive from manifest seed {}", m.seed),
            ));
        }
        if (scene.image.width(), scene.image.height()) != (m.width, m.height) {
            return Err(Error::invalid(
                "write dataset",
                format!("scene {id} is {}x{}", scene.image.width(), scene.image.height()),
            ));
        }
        let file = image_file(id);
        scene.image.save(&dir.join(&file))?;
        let rec = SceneRecord {
            id,
            file,
            objects: scene
                .annotations
                .iter()
                .map(|a| ObjectRecord {
                    class: a.class_id,
                    bbox: [a.bbox.x0, a.bbox.y0, a.bbox.x1, a.bbox.y1],
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(&ann_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&ann_path, e))?;

    let man_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(m)?;
    fs::write(&man_path, text + "\n").map_err(|e| Error::io(&man_path, e))
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(&path, e.line(), e.to_string()))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let path: PathBuf = dir.join("annotations.jsonl");
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut scenes = Vec::with_capacity(manifest.count);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord = serde_json::from_str(&line).map_err(|e| format_err(&path, lineno, e.to_string()))?;
        if rec.id != scenes.len() {
            return Err(format_err(&path, lineno, format!("expected id {}, got {}", scenes.len(), rec.id)));
        }
        let mut annotations = Vec::with_capacity(rec.objects.len());
        for o in &rec.objects {
            if o.class >= manifest.classes.len() {
                return Err(format_err(&path, lineno, format!("class {} out of range", o.class)));
            }
            let [x0, y0, x1, y1] = o.bbox;
            let bbox = RoiBox::new(x0, y0, x1, y1).map_err(|e| format_err(&path, lineno, e.to_string()))?;
            annotations.push(Annotation {
                class_id: o.class,
                bbox,
            });
        }
        let image = Image::load(&dir.join(&rec.file))?;
        if (image.width(), image.height()) != (manifest.width, manifest.height) {
            return Err(format_err(
                &path,
                lineno,
                format!("{} is {}x{}, manifest says {}x{}", rec.file, image.width(), image.height(), manifest.width, manifest.height),
            ));
        }
        scenes.push(Scene {
            image,
            annotations,
            scene_seed: derive_seed(manifest.seed, rec.id as u64),
        });
    }
    if scenes.len() != manifest.count {
        return Err(format_err(
            &path,
            0,
            format!("manifest count {} but {} records", manifest.count, scenes.len()),
        ));
    }
    Ok(Dataset { manifest, scenes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn object_line_parses() {
        let o: ObjectRecord = serde_json::from_str(r#"{"class":2,"box":[10.0,12.0,40.0,44.0]}"#).unwrap();
        assert_eq!(o.class, 2);
        assert_eq!(o.bbox, [10.0, 12.0, 40.0, 44.0]);
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            seed: 1,
            count: 1,
            width: 4,
            height: 4,
            classes: vec!["disk".into()],
        };
        fs::write(dir.path().join("manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
        fs::write(dir.path().join("annotations.jsonl"), "{\"id\":0,\"file\":\"x\",\"objects\":[{\"class\":0}]}\n").unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("annotations.jsonl") && err.contains(":1"), "{err}");
    }
}
