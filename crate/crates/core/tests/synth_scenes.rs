use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use irs_core::geometry::project_mask;
use irs_core::model::{Config, Vec3};
use irs_core::pipeline::segment_sequence;
use irs_core::sequence::{read_ground_truth, read_sequence};
use irs_core::synth::{emit_sequence, generate_scene, SceneSpec};

fn spec(rooms_x: u32, rooms_y: u32, objects: u32, seed: u64) -> SceneSpec {
    SceneSpec {
        rooms_x,
        rooms_y,
        objects_per_room: objects,
        seed,
        ..SceneSpec::default()
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn same_seed_gives_identical_directories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = spec(2, 1, 3, 17);
    emit_sequence(&generate_scene(&s).unwrap(), a.path(), true).unwrap();
    emit_sequence(&generate_scene(&s).unwrap(), b.path(), true).unwrap();
    let (da, db) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert!(da.len() > 4);
    assert_eq!(da, db);

    let c = tempfile::tempdir().unwrap();
    emit_sequence(&generate_scene(&spec(2, 1, 3, 18)).unwrap(), c.path(), true).unwrap();
    assert_ne!(da, dir_bytes(c.path()));
}

#[test]
fn emitted_sequence_reads_back_equal() {
    let scene = generate_scene(&SceneSpec {
        noise_sigma: 0.1,
        ..spec(1, 2, 2, 5)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_sequence(&scene, dir.path(), true).unwrap();
    assert_eq!(read_sequence(dir.path()).unwrap(), scene.sequence);
    assert_eq!(read_ground_truth(dir.path()).unwrap(), scene.truth);

    let bare = tempfile::tempdir().unwrap();
    emit_sequence(&scene, bare.path(), false).unwrap();
    assert!(!bare.path().join("gt.txt").exists());
    assert!(!bare.path().join("gt.bin").exists());
    assert!(read_ground_truth(bare.path()).is_err());
}

/// Every lifted mask point must coincide with the generator's own ray hit
/// on the object that owns the mask.
#[test]
fn projection_round_trip_against_generator_geometry() {
    let scene = generate_scene(&spec(2, 2, 3, 9)).unwrap();
    let seq = &scene.sequence;
    let intr = &seq.intrinsics;
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for f in &seq.frames {
        let o = f.pose.translation();
        for m in &f.masks {
            let key = irs_core::model::ObsKey {
                frame_id: f.id,
                mask_id: m.mask_id,
            };
            let owner = scene.truth.instance_of(key).expect("mask has an owner");
            let obj = &scene.objects[owner as usize];
            let lifted = project_mask(&f.depth, &m.pixels, intr, &f.pose).unwrap();
            assert_eq!(lifted.len(), m.pixels.len());
            for (px, p) in m.pixels.iter().zip(&lifted) {
                let ray = Vec3::new(
                    (px.u as f64 - intr.cx) / intr.fx,
                    (px.v as f64 - intr.cy) / intr.fy,
                    1.0,
                );
                let d = f.pose.rotate(ray);
                let t = obj.ray_hit(o, d).expect("mask pixel sees its object");
                let truth = o + d * t;
                worst = worst.max((*p - truth).norm());
                checked += 1;
            }
        }
    }
    assert!(checked > 1000);
    assert!(worst < 1e-4, "worst round-trip error {worst}");
}

#[test]
fn every_mask_point_has_one_owner() {
    let scene = generate_scene(&spec(2, 1, 3, 2)).unwrap();
    let mut masks = 0;
    for f in &scene.sequence.frames {
        for m in &f.masks {
            let key = irs_core::model::ObsKey {
                frame_id: f.id,
                mask_id: m.mask_id,
            };
            let owners = scene.truth.masks.iter().filter(|(k, _)| *k == key).count();
            assert_eq!(owners, 1);
            masks += 1;
        }
    }
    assert_eq!(masks, scene.truth.masks.len());
}

fn check_rooms(s: &SceneSpec) {
    let scene = generate_scene(s).unwrap();
    let rooms = segment_sequence(&scene.sequence, &Config::default()).unwrap();
    assert_eq!(rooms.len(), scene.truth.rooms.len(), "{s:?}");
    for gt in &scene.truth.rooms {
        let c = gt.bbox.center();
        let r = rooms
            .rooms
            .iter()
            .min_by(|a, b| (a.bbox.center() - c).norm().total_cmp(&(b.bbox.center() - c).norm()))
            .unwrap();
        for axis in 0..3 {
            assert!(
                (r.bbox.min.get(axis) - gt.bbox.min.get(axis)).abs() <= 0.1,
                "{s:?} {:?} {:?}",
                r.bbox,
                gt.bbox
            );
            assert!(
                (r.bbox.max.get(axis) - gt.bbox.max.get(axis)).abs() <= 0.1,
                "{s:?} {:?} {:?}",
                r.bbox,
                gt.bbox
            );
        }
    }
}

#[test]
fn grids_recover_their_rooms() {
    check_rooms(&spec(1, 1, 0, 0));
    check_rooms(&spec(2, 2, 0, 1));
    check_rooms(&spec(3, 2, 0, 2));
    check_rooms(&spec(1, 3, 0, 3));
}

#[test]
fn wide_doors_do_not_join_rooms() {
    for door in [0.6, 1.2, 1.5] {
        check_rooms(&SceneSpec {
            door_width: door,
            ..spec(2, 2, 0, 4)
        });
    }
}

#[test]
fn overfull_rooms_are_refused() {
    let err = generate_scene(&spec(1, 1, 80, 0)).unwrap_err();
    assert!(err.to_string().contains("scene overfull"), "{err}");
}
