//! `root/<class_name>/<image files>` datasets.

use std::path::{Path, PathBuf};

use ::image::imageops::FilterType;
use log::warn;

use super::image::Image;
use super::{Dataset, Domain, ImageExample};
use crate::error::{Error, Result};

const EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Load a class-per-directory tree. Classes are indexed in sorted directory
/// order and images are resized bilinearly to `image_size` squares.
pub fn load_folder_dataset(root: impl AsRef<Path>, domain: Domain, image_size: usize) -> Result<Dataset> {
    let root = root.as_ref();
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("{} has no class directories", root.display())));
    }
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut examples = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        class_names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        if files.is_empty() {
            warn!("class directory {} is empty", dir.display());
        }
        for file in files {
            let img = ::image::open(&file).map_err(|source| Error::Image {
                path: file.clone(),
                source,
            })?;
            let rgb = ::image::imageops::resize(
                &img.to_rgb8(),
                image_size as u32,
                image_size as u32,
                FilterType::Triangle,
            );
            let id = domain.id_base() + examples.len() as u64;
            examples.push(ImageExample {
                pixels: Image::from_rgb8(&rgb),
                label: Some(label),
                domain,
                id,
            });
        }
    }
    let name = root.file_name().unwrap_or_default().to_string_lossy().into_owned();
    Dataset::new(name, domain, class_names, examples)
}

/// Write a dataset as `root/<class_name>/<id>.png`.
pub fn export_folder_dataset(dataset: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for name in &dataset.class_names {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for e in dataset.examples() {
        let label = e
            .label
            .ok_or_else(|| Error::Data(format!("cannot export unlabeled example {}", e.id)))?;
        let path = root
            .join(&dataset.class_names[label])
            .join(format!("{:06}.png", e.id - e.domain.id_base()));
        e.pixels
            .to_rgb8()
            .save(&path)
            .map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, value: u8) {
        let img = ::image::RgbImage::from_pixel(5, 7, ::image::Rgb([value, 0, 255]));
        img.save(path).unwrap();
    }

    #[test]
    fn sorted_class_order_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["b", "a"] {
            std::fs::create_dir(dir.path().join(class)).unwrap();
            for i in 0..3 {
                write_png(&dir.path().join(class).join(format!("{i}.png")), 10 * i);
            }
        }
        let ds = load_folder_dataset(dir.path(), Domain::Source, 16).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.class_names, vec!["a", "b"]);
        let labels: Vec<_> = ds.examples().iter().map(|e| e.label.unwrap()).collect();
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
        let px = &ds.get(0).pixels;
        assert_eq!((px.channels, px.height, px.width), (3, 16, 16));
        assert!((px.get(2, 3, 3) - 1.0).abs() < 1e-6);

        let again = load_folder_dataset(dir.path(), Domain::Source, 16).unwrap();
        assert_eq!(ds.content_hash(), again.content_hash());
    }

    #[test]
    fn empty_class_retained_and_bad_file_named() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("a")).unwrap();
        std::fs::create_dir(dir.path().join("b")).unwrap();
        write_png(&dir.path().join("b").join("0.png"), 1);
        let ds = load_folder_dataset(dir.path(), Domain::Target, 16).unwrap();
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.get(0).label, Some(1));

        std::fs::write(dir.path().join("a").join("broken.png"), b"not a png").unwrap();
        match load_folder_dataset(dir.path(), Domain::Target, 16) {
            Err(Error::Image { path, .. }) => assert!(path.ends_with("broken.png")),
            other => panic!("expected image error, got {other:?}"),
        }
    }
}
