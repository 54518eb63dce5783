//! Synthetic benchmark properties: tight boxes, class balance, domain
//! recipes and dataset storage.

mod common;

use cdfkd::scenes::{
    generate_scene, generate_scene_with_layout, generate_scenes, read_dataset, render_domain_variant, write_dataset,
    Dataset, DomainVariant, Manifest, RecipeOp, SceneConfig,
};

#[test]
fn boxes_are_tight_around_rendered_pixels() {
    let cfg = SceneConfig::default();
    let mut checked = 0;
    for seed in 0..200 {
        let (scene, shapes) = generate_scene_with_layout(seed, &cfg).unwrap();
        for (shape, ann) in shapes.iter().zip(&scene.annotations) {
            let b = ann.bbox;
            let mut mask = Vec::new();
            for py in 0..cfg.height {
                for px in 0..cfg.width {
                    if shape.coverage(px, py) > 0.0 {
                        mask.push((px as f32, py as f32));
                    }
                }
            }
            assert!(!mask.is_empty());
            // every covered pixel overlaps the box
            for &(x, y) in &mask {
                assert!(x + 1.0 > b.x0 && x < b.x1 && y + 1.0 > b.y0 && y < b.y1, "seed {seed}");
            }
            // shrinking any side by 2 px drops covered pixels
            let left = mask.iter().any(|&(x, _)| x < b.x0 + 2.0);
            let right = mask.iter().any(|&(x, _)| x + 1.0 > b.x1 - 2.0);
            let top = mask.iter().any(|&(_, y)| y < b.y0 + 2.0);
            let bottom = mask.iter().any(|&(_, y)| y + 1.0 > b.y1 - 2.0);
            assert!(left && right && top && bottom, "seed {seed}: {b:?}");
            checked += 1;
        }
    }
    assert!(checked > 300);
}

#[test]
fn class_histogram_is_uniform() {
    let cfg = SceneConfig::default();
    let scenes = generate_scenes(21, 2000, &cfg).unwrap();
    let mut counts = vec![0usize; cfg.classes];
    for s in &scenes {
        for a in &s.annotations {
            counts[a.class_id] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let expected = 1.0 / cfg.classes as f64;
    for &c in &counts {
        assert!((c as f64 / total as f64 - expected).abs() <= 0.03, "{counts:?}");
    }
}

#[test]
fn target_dark_is_darker_on_every_image() {
    let scenes = generate_scenes(22, 300, &SceneConfig::default()).unwrap();
    for s in &scenes {
        let dark = render_domain_variant(s, DomainVariant::TargetDark);
        assert!(dark.image.mean_luminance() < s.image.mean_luminance());
        assert_eq!(dark.annotations, s.annotations);
    }
}

#[test]
fn source_clean_is_identity_and_streaks_are_target_only() {
    let s = generate_scene(5, &SceneConfig::default()).unwrap();
    assert_eq!(render_domain_variant(&s, DomainVariant::SourceClean), s);
    let has_streaks = |v: DomainVariant| v.recipe().iter().any(|op| matches!(op, RecipeOp::Streaks { .. }));
    assert!(has_streaks(DomainVariant::TargetDarkStreaks));
    assert!(!has_streaks(DomainVariant::SourceClean));
}

#[test]
fn lowres_variant_scales_boxes_with_the_image() {
    let s = generate_scene(6, &SceneConfig::default()).unwrap();
    let low = render_domain_variant(&s, DomainVariant::TargetLowresNoisy);
    let rx = low.image.width() as f32 / s.image.width() as f32;
    assert!(rx < 1.0);
    for (a, b) in s.annotations.iter().zip(&low.annotations) {
        assert!((a.bbox.x1 * rx - b.bbox.x1).abs() < 1e-3);
    }
}

#[test]
fn dataset_round_trips_and_fits_the_size_budget() {
    let cfg = SceneConfig::default();
    let count = 1500;
    let data = Dataset {
        manifest: Manifest {
            seed: 8,
            count,
            width: cfg.width,
            height: cfg.height,
            classes: cfg.class_names(),
        },
        scenes: generate_scenes(8, count, &cfg).unwrap(),
    };
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data).unwrap();
    let bytes: u64 = walk(dir.path());
    println!("1500-scene dataset: {:.1} MB", bytes as f64 / 1e6);
    assert!(bytes < 50_000_000);
    assert_eq!(read_dataset(dir.path()).unwrap(), data);
}

fn walk(dir: &std::path::Path) -> u64 {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let m = e.metadata().unwrap();
            if m.is_dir() {
                walk(&e.path())
            } else {
                m.len()
            }
        })
        .sum()
}
