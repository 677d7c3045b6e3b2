//! Directory-per-class image ingestion for spectrogram-style data.
//!
//! Layout: `<root>/<class_name>/<image files>`. Class indices follow sorted
//! directory-name order; within a class, files are ordered by name, so
//! repeated loads give identical ordering. Images are collapsed to grayscale
//! by luminance, resized to a square side, and normalized to [0, 1].

use std::path::Path;

use image::imageops::FilterType;
use ndarray::Array4;

use crate::{Error, Result};

use super::LabeledImageSet;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Loads a labeled image folder, resizing everything to
/// `image_side x image_side` grayscale in [0, 1].
pub fn load_labeled_folder(root: &Path, image_side: usize) -> Result<LabeledImageSet> {
    if image_side == 0 {
        return Err(Error::Config("image_side must be positive".into()));
    }
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }

    let mut class_dirs: Vec<(String, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            class_dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!(
            "{} contains no class directories",
            root.display()
        )));
    }

    let mut pixels: Vec<f32> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut class_names: Vec<String> = Vec::new();

    for (class_idx, (name, dir)) in class_dirs.iter().enumerate() {
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Dataset(format!(
                "class directory {} contains no decodable images",
                dir.display()
            )));
        }
        for file in files {
            let img = image::open(&file)
                .map_err(|e| Error::Dataset(format!("cannot decode {}: {e}", file.display())))?;
            let gray = img.to_luma8();
            let resized = image::imageops::resize(
                &gray,
                image_side as u32,
                image_side as u32,
                FilterType::Triangle,
            );
            pixels.extend(resized.pixels().map(|p| p.0[0] as f32 / 255.0));
            labels.push(class_idx);
        }
        class_names.push(name.clone());
    }

    let n = labels.len();
    let images = Array4::from_shape_vec((n, 1, image_side, image_side), pixels)
        .map_err(|e| Error::Dataset(e.to_string()))?;
    Ok(LabeledImageSet {
        images,
        labels,
        n_classes: class_names.len(),
        class_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};

    fn write_png(path: &Path, side: u32, value: u8) {
        let img = GrayImage::from_pixel(side, side, Luma([value]));
        img.save(path).unwrap();
    }

    #[test]
    fn loads_classes_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        for (class, value) in [("b_class", 200u8), ("a_class", 40u8)] {
            let cdir = dir.path().join(class);
            std::fs::create_dir(&cdir).unwrap();
            for i in 0..3 {
                write_png(&cdir.join(format!("img{i}.png")), 12, value);
            }
        }
        let set = load_labeled_folder(dir.path(), 8).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.n_classes, 2);
        assert_eq!(set.labels, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(set.class_names, vec!["a_class", "b_class"]);
        assert_eq!(set.images.dim(), (6, 1, 8, 8));
        // a_class images are darker than b_class images.
        assert!(set.images[[0, 0, 4, 4]] < set.images[[3, 0, 4, 4]]);
        assert!(set.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn reload_gives_identical_ordering() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["x", "y", "z"] {
            let cdir = dir.path().join(class);
            std::fs::create_dir(&cdir).unwrap();
            for i in 0..2 {
                write_png(&cdir.join(format!("{i}.png")), 6, (i * 90) as u8);
            }
        }
        let a = load_labeled_folder(dir.path(), 6).unwrap();
        let b = load_labeled_folder(dir.path(), 6).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn rejects_empty_class_directory_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good");
        std::fs::create_dir(&good).unwrap();
        write_png(&good.join("a.png"), 6, 10);
        std::fs::create_dir(dir.path().join("empty_class")).unwrap();
        let err = load_labeled_folder(dir.path(), 6).unwrap_err();
        assert!(err.to_string().contains("empty_class"), "{err}");
    }

    #[test]
    fn many_classes_map_to_n_classes() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..22 {
            let cdir = dir.path().join(format!("glitch_{i:02}"));
            std::fs::create_dir(&cdir).unwrap();
            write_png(&cdir.join("only.png"), 4, i as u8 * 10);
        }
        let set = load_labeled_folder(dir.path(), 4).unwrap();
        assert_eq!(set.n_classes, 22);
        assert_eq!(set.len(), 22);
    }
}
