//! Acceptance suite. Every criterion prints one `PASS` or `FAIL` line on
//! stdout (outside the harness capture) and then asserts.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamdamage::augment::{
    apply_trace, augment_sample, draw_augmentation, sample_rng, AugmentationConfig, AugmentationTrace, ColorOp,
    PhotometricDraw, QualityOp, ToneOp,
};
use siamdamage::evaluation::{
    balanced_accuracy, confusion, f1_per_class, predict_quarter, report, ConfusionMatrix, FoldTag,
};
use siamdamage::geodata::{
    assign_point_labels, dilate_mask, merge_classes, BuildingFootprint, ClassScheme, DamageLabel, DamagePoint,
    FootprintId, FootprintLayer, GeoRaster, GeoTransform, LabelMask, PointLayer, Polygon, RasterGrid, UNLABELED,
};
use siamdamage::model::{
    BottleneckKind, BottleneckSe, Conv2d, DpnBlock, EncoderKind, Mode, ModelConfig, ParamStore, SeModule,
    SegmentationModel,
};
use siamdamage::pipeline::{
    collect_records, comparison_report, write_synthetic_project, Overrides, Project, ReportAxis,
};
use siamdamage::sampling::{
    build_fold_datasets, extract_patches, quarter_split, PatchSample, PixelRect, Scene, TilingConfig,
};
use siamdamage::synthetic::{generate_scene, SyntheticConfig};
use siamdamage::training::{masked_cross_entropy, train_fold, TrainConfig, TrainOptions};

fn criterion(n: usize, name: &str, body: impl FnOnce() -> String) {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body));
    let secs = t.elapsed().as_secs_f64();
    let line = match &result {
        Ok(detail) => format!("PASS criterion {n:>2} {name} ({secs:.1}s) {detail}\n"),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            format!("FAIL criterion {n:>2} {name} ({secs:.1}s) {msg}\n")
        }
    };
    let mut out = std::io::stdout();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    if let Err(e) = result {
        resume_unwind(e);
    }
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, classes: u8, unlabeled: f64) -> LabelMask {
    let data = (0..w * h)
        .map(|_| {
            if rng.random_bool(unlabeled) {
                UNLABELED
            } else {
                rng.random_range(0..classes)
            }
        })
        .collect();
    LabelMask::from_raw(w, h, data).unwrap()
}

// ---- 1, 2: metrics ----

#[test]
fn criterion_01_metric_oracle() {
    criterion(1, "metric oracle equivalence", || {
        let t = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..1000 {
            let c = rng.random_range(2..=4u8);
            let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
            let frac = rng.random_range(0.0..=0.9);
            let truth = random_mask(&mut rng, w, h, c, frac);
            let pred = random_mask(&mut rng, w, h, c, 0.0);

            let c = c as usize;
            let (mut tp, mut fp, mut fn_, mut support) = (vec![0u64; c], vec![0u64; c], vec![0u64; c], vec![0u64; c]);
            for y in 0..h {
                for x in 0..w {
                    let t = truth.get(x, y);
                    if t == UNLABELED {
                        continue;
                    }
                    let (t, p) = (t as usize, pred.get(x, y) as usize);
                    support[t] += 1;
                    if t == p {
                        tp[t] += 1;
                    } else {
                        fp[p] += 1;
                        fn_[t] += 1;
                    }
                }
            }
            let cm = confusion(&pred, &truth, c).unwrap();
            let f1 = f1_per_class(&cm);
            for k in 0..c {
                let den = 2 * tp[k] + fp[k] + fn_[k];
                let want = if den == 0 { 0.0 } else { (2 * tp[k]) as f64 / den as f64 };
                assert!(
                    (f1[k] - want).abs() <= 1e-12,
                    "trial {trial} class {k}: {} vs {want}",
                    f1[k]
                );
            }
            let recalls: Vec<f64> = (0..c)
                .filter(|&k| support[k] > 0)
                .map(|k| tp[k] as f64 / support[k] as f64)
                .collect();
            let want = if recalls.is_empty() {
                0.0
            } else {
                recalls.iter().sum::<f64>() / recalls.len() as f64
            };
            let got = balanced_accuracy(&cm);
            assert!((got - want).abs() <= 1e-12, "trial {trial}: BAS {got} vs {want}");
        }
        let secs = t.elapsed().as_secs_f64();
        assert!(secs < 30.0, "took {secs:.1}s");
        "1000 pairs".into()
    });
}

#[test]
fn criterion_02_f1_spot_values() {
    criterion(2, "F1 spot values", || {
        let mut cm = ConfusionMatrix::new(2);
        cm.add(0, 0, 2);
        cm.add(1, 0, 1);
        cm.add(0, 1, 1);
        let f1 = f1_per_class(&cm)[0];
        assert!((f1 - 0.6667).abs() < 1e-4 && (f1 - 2.0 / 3.0).abs() < 1e-9, "{f1}");

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for c in 2..=4u8 {
            let mut truth = random_mask(&mut rng, 20, 20, c, 0.3);
            for k in 0..c {
                truth.set(k as usize, 0, k);
            }
            let pred = LabelMask::from_raw(
                20,
                20,
                truth
                    .as_slice()
                    .iter()
                    .map(|&v| if v == UNLABELED { 0 } else { v })
                    .collect(),
            )
            .unwrap();
            let cm = confusion(&pred, &truth, c as usize).unwrap();
            assert!(f1_per_class(&cm).iter().all(|&f| f == 1.0));
            assert_eq!(balanced_accuracy(&cm), 1.0);
        }
        format!("F1 = {f1:.4}")
    });
}

// ---- 3: masked loss ----

#[test]
fn criterion_03_masked_loss_gradients() {
    criterion(3, "masked loss gradients", || {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(3, DType::F64, &dev);
        let conv1 = Conv2d::new(&mut store, "c1", 3, 6, 3, 1, 1, true).unwrap();
        let conv2 = Conv2d::new(&mut store, "c2", 6, 3, 1, 1, 1, true).unwrap();
        assert!(store.num_parameters() <= 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (_, var) in store.trainable() {
            let n = var.elem_count();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-0.6..0.6)).collect();
            var.set(&Tensor::from_vec(v, var.dims(), &dev).unwrap()).unwrap();
        }
        let x: Vec<f64> = (0..3 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(x, (1, 3, 8, 8), &dev).unwrap();
        let labels = random_mask(&mut rng, 8, 8, 3, 0.4);
        let net = || {
            conv2
                .forward(&conv1.forward(&x, Mode::Train).unwrap().tanh().unwrap(), Mode::Train)
                .unwrap()
        };
        let loss = || masked_cross_entropy(&net(), &[&labels]).unwrap().loss;

        let grads = loss().backward().unwrap();
        let eps = 1e-6;
        let mut worst = 0f64;
        for (name, var) in store.trainable() {
            let g: Vec<f64> = grads
                .get(var.as_tensor())
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1()
                .unwrap();
            let base: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            for i in 0..base.len() {
                let at = |d: f64| {
                    let mut v = base.clone();
                    v[i] += d;
                    var.set(&Tensor::from_vec(v, var.dims(), &dev).unwrap()).unwrap();
                    loss().to_scalar::<f64>().unwrap()
                };
                let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
                var.set(&Tensor::from_vec(base.clone(), var.dims(), &dev).unwrap())
                    .unwrap();
                let scale = numeric.abs().max(g[i].abs());
                if scale > 1e-7 {
                    let rel = (numeric - g[i]).abs() / scale;
                    worst = worst.max(rel);
                    assert!(rel <= 1e-3, "{name}[{i}]: numeric {numeric} analytic {}", g[i]);
                } else {
                    assert!((numeric - g[i]).abs() <= 1e-9);
                }
            }
        }

        let z = Var::from_tensor(&net().detach()).unwrap();
        let gz = masked_cross_entropy(z.as_tensor(), &[&labels])
            .unwrap()
            .loss
            .backward()
            .unwrap();
        let gz: Vec<f64> = gz.get(z.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let mut zeros = 0;
        for (i, &l) in labels.as_slice().iter().enumerate() {
            if l == UNLABELED {
                for c in 0..3 {
                    assert_eq!(gz[c * 64 + i], 0.0);
                    zeros += 1;
                }
            }
        }
        assert!(zeros > 0);
        format!("{} params, worst rel err {worst:.1e}", store.num_parameters())
    });
}

// ---- 4: dilation ----

#[test]
fn criterion_04_dilation_oracle() {
    criterion(4, "dilation oracle", || {
        let rank = |v: u8| if v == UNLABELED { -1i32 } else { v as i32 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let frac = rng.random_range(0.3..=0.95);
            let m = random_mask(&mut rng, 16, 16, 4, frac);
            let got = dilate_mask(&m, 3).unwrap();
            for y in 0..16i32 {
                for x in 0..16i32 {
                    let mut best = -1;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (xx, yy) = (x + dx, y + dy);
                            if (0..16).contains(&xx) && (0..16).contains(&yy) {
                                best = best.max(rank(m.get(xx as usize, yy as usize)));
                            }
                        }
                    }
                    let want = if best < 0 { UNLABELED } else { best as u8 };
                    assert_eq!(got.get(x as usize, y as usize), want);
                }
            }
            assert_eq!(dilate_mask(&m, 1).unwrap(), m);
        }
        "200 masks".into()
    });
}

// ---- 5: LOQO partition ----

fn blank_scene(w: usize, h: usize) -> Scene {
    let grid = RasterGrid {
        width: w,
        height: h,
        transform: GeoTransform::north_up(0.0, h as f64, 1.0),
        crs: None,
    };
    let raster = GeoRaster::new(grid, 3, vec![1; w * h * 3]).unwrap();
    Scene::new(raster.clone(), raster, LabelMask::unlabeled(w, h)).unwrap()
}

#[test]
fn criterion_05_loqo_partition() {
    criterion(5, "LOQO partition", || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (w, h) = (rng.random_range(2..5000), rng.random_range(2..5000));
            let folds = quarter_split(w, h).unwrap();
            let qs = folds[0].quarters;
            for f in &folds {
                assert_eq!(f.quarters, qs);
                assert_eq!(f.test_quarter, qs[f.fold_index]);
            }
            for i in 0..4 {
                for j in i + 1..4 {
                    assert!(!qs[i].intersects(&qs[j]), "{w}x{h}: quarters {i} and {j} overlap");
                }
            }
            assert_eq!(qs.iter().map(|q| q.area()).sum::<usize>(), w * h);
            assert!(qs.iter().all(|q| folds[0].scene.contains_rect(q)));
        }

        let cfg = TilingConfig {
            patch_size: 1024,
            stride: 64,
            ..TilingConfig::default()
        };
        let scene = blank_scene(2048, 2048);
        let region = PixelRect::from_origin(0, 0, 2048, 2048);
        let patches = extract_patches(&scene, &region, &cfg).unwrap();
        assert_eq!(patches.len(), 289);
        let mut origins = BTreeSet::new();
        for p in patches {
            assert_eq!((p.pre.width(), p.labels.height()), (1024, 1024));
            assert!(region.contains_rect(&PixelRect::from_origin(p.origin.0, p.origin.1, 1024, 1024)));
            origins.insert(p.origin);
        }
        assert_eq!(origins.len(), 289);

        let big = blank_scene(4096, 4096);
        let folds = quarter_split(4096, 4096).unwrap();
        let mut train_total = 0;
        for ds in build_fold_datasets(&big, &folds, &cfg).unwrap() {
            ds.check_disjoint().unwrap();
            assert_eq!(ds.train.len(), 3 * 289);
            assert_eq!(ds.test.len(), 289);
            for r in &ds.train {
                assert!(!r.rect().intersects(&ds.fold.test_quarter));
            }
            train_total += ds.train.len();
        }
        format!("289 patches, {train_total} train patches checked over 4 folds")
    });
}

// ---- 6: augmentation ----

fn check_ranges(cfg: &AugmentationConfig, draw: &PhotometricDraw) {
    let within = |v: f64, r: [f64; 2]| assert!(v >= r[0] && v <= r[1], "{v} outside {r:?}");
    match draw.color {
        Some(ColorOp::RgbShift(s)) => s.iter().for_each(|&v| within(v, cfg.rgb_shift_range)),
        Some(ColorOp::Grayscale | ColorOp::Sepia) | None => {}
    }
    match draw.tone {
        Some(ToneOp::BrightnessContrast { brightness, contrast }) => {
            within(brightness, cfg.brightness_contrast_range);
            within(contrast, cfg.brightness_contrast_range);
        }
        Some(ToneOp::Gamma { percent }) => within(percent, cfg.gamma_range),
        None => {}
    }
    match &draw.quality {
        Some(QualityOp::Blur { kernel }) => assert!(kernel % 2 == 1 && (3..=7).contains(kernel)),
        Some(QualityOp::Downscale { factor }) => assert_eq!(*factor, 0.25),
        Some(QualityOp::GridDistort { x_steps, y_steps }) => {
            assert_eq!((x_steps.len(), y_steps.len()), (cfg.grid_cells, cfg.grid_cells));
            x_steps
                .iter()
                .chain(y_steps)
                .for_each(|&v| within(v, cfg.grid_distort_range));
        }
        None => {}
    }
}

fn textured_sample(seed: u64, size: usize) -> PatchSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = || {
        let data = (0..size * size * 3).map(|_| rng.random_range(0..=255u8)).collect();
        siamdamage::image::RgbImage::from_raw(size, size, data).unwrap()
    };
    let (pre, post) = (img(), img());
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    PatchSample {
        pre,
        post,
        labels: random_mask(&mut rng, size, size, 4, 0.5),
        origin: (0, 0),
        fold: None,
    }
}

#[test]
fn criterion_06_augmentation_contract() {
    criterion(6, "augmentation contract", || {
        let cfg = AugmentationConfig::default();
        assert_eq!(cfg.shift_range, [-0.0625, 0.0625]);
        assert_eq!(cfg.scale_range, [0.9, 1.1]);
        assert_eq!(cfg.rotate_range, [-45.0, 45.0]);
        assert_eq!(cfg.rgb_shift_range, [-20.0, 20.0]);
        assert_eq!(cfg.brightness_contrast_range, [-0.2, 0.2]);
        assert_eq!(cfg.gamma_range, [80.0, 120.0]);
        assert_eq!(cfg.blur_kernel_range, [3, 7]);
        assert_eq!(cfg.downscale_factor, 0.25);
        assert_eq!(cfg.grid_distort_range, [-0.3, 0.3]);

        let n = 100_000;
        let mut fired = [0usize; 8];
        for i in 0..n {
            let t: AugmentationTrace = draw_augmentation(&cfg, &mut sample_rng(6, i as u64));
            if t.geometric.flip.is_some() {
                fired[0] += 1;
            }
            if let Some(a) = t.geometric.affine {
                fired[1] += 1;
                let within = |v: f64, r: [f64; 2]| assert!(v >= r[0] && v <= r[1], "{v} outside {r:?}");
                within(a.shift_x, cfg.shift_range);
                within(a.shift_y, cfg.shift_range);
                within(a.scale, cfg.scale_range);
                within(a.rotate_deg, cfg.rotate_range);
            }
            for (k, p) in [&t.pre, &t.post].into_iter().enumerate() {
                check_ranges(&cfg, p);
                fired[2 + 3 * k] += p.color.is_some() as usize;
                fired[3 + 3 * k] += p.tone.is_some() as usize;
                fired[4 + 3 * k] += p.quality.is_some() as usize;
            }
        }
        let rates: Vec<f64> = fired.iter().map(|&f| f as f64 / n as f64).collect();
        for (name, r) in [
            "flip",
            "affine",
            "pre colour",
            "pre tone",
            "pre quality",
            "post colour",
            "post tone",
            "post quality",
        ]
        .iter()
        .zip(&rates)
        {
            assert!((r - 0.5).abs() <= 0.02, "{name} fired at {r}");
        }

        for seed in 0..50 {
            let s = textured_sample(seed, 32);
            let a = augment_sample(&s, &cfg, &mut sample_rng(seed, 9));
            let b = augment_sample(&s, &cfg, &mut sample_rng(seed, 9));
            assert_eq!(a, b);

            let mut t = draw_augmentation(&cfg, &mut sample_rng(seed, 10));
            t.geometric = Default::default();
            let out = apply_trace(&s, &t);
            assert_eq!(out.labels, s.labels);
        }
        format!(
            "rates {:?}",
            rates.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        )
    });
}

// ---- 7: architecture ----

#[test]
fn criterion_07_architecture_contracts() {
    criterion(7, "architecture contracts", || {
        let dev = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut noise = |shape: &[usize]| {
            let n = shape.iter().product();
            let v: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::from_vec(v, shape, &dev).unwrap()
        };
        for kind in EncoderKind::ALL {
            for classes in [2, 3, 4] {
                let model = SegmentationModel::new(&ModelConfig::tiny(kind, classes), 1, DType::F32, &dev).unwrap();
                let (a, b) = (noise(&[1, 3, 64, 64]), noise(&[1, 3, 64, 64]));
                let y = model.forward(&a, &b, Mode::Eval).unwrap();
                assert_eq!(y.dims(), &[1, classes, 64, 64], "{kind:?}");
            }
        }

        let mut store = ParamStore::new(7, DType::F32, &dev);
        let se = SeModule::new(&mut store, "se", 16, 4).unwrap();
        let gates: Vec<f32> = se
            .gate(&noise(&[2, 16, 8, 8]), Mode::Eval)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert!(gates.iter().all(|&g| g > 0.0 && g < 1.0));

        let x = BottleneckSe::new(&mut store, "x", BottleneckKind::SeResNeXt, 12, 8, 1, 4, 4).unwrap();
        let s = BottleneckSe::new(&mut store, "s", BottleneckKind::SeNet, 12, 8, 1, 4, 4).unwrap();
        assert_eq!(x.channel_trace(), [12, 8, 8, 32]);
        assert_eq!(s.channel_trace(), [12, 8, 32, 32]);

        let (r, d, g, k) = (8, 4, 3, 4);
        let mut blocks = vec![DpnBlock::new(&mut store, "d0", 6, r, Some(d), 4, g, 1, 2).unwrap()];
        for i in 1..k {
            let c_in = blocks[i - 1].out_channels();
            blocks.push(DpnBlock::new(&mut store, &format!("d{i}"), c_in, r, None, 4, g, 1, 2).unwrap());
        }
        let (mut res, mut dense) = blocks[0].forward(&noise(&[1, 6, 8, 8]), None, Mode::Train).unwrap();
        assert_eq!(dense.dims()[1], d + g);
        for (i, blk) in blocks.iter().enumerate().skip(1) {
            (res, dense) = blk.forward(&res, Some(&dense), Mode::Train).unwrap();
            assert_eq!(dense.dims()[1], d + (i + 1) * g);
        }
        assert_eq!(res.dims()[1], r);

        let count = |k| {
            SegmentationModel::shape_only(&ModelConfig::new(k, 3))
                .unwrap()
                .num_parameters()
        };
        let resnet = count(EncoderKind::ResNet);
        let senet = count(EncoderKind::SeNet);
        let seresnext = count(EncoderKind::SeResNeXt);
        assert!(
            senet > resnet && seresnext > resnet,
            "resnet {resnet} senet {senet} seresnext {seresnext}"
        );
        format!("params resnet {resnet}, seresnext {seresnext}, senet {senet}")
    });
}

// ---- 8: synthetic end-to-end ----

fn macro_f1(cm: &ConfusionMatrix, to: ClassScheme) -> f64 {
    report(&cm.coarsen(ClassScheme::ThreeClass, to).unwrap(), to, FoldTag::All)
        .unwrap()
        .macro_f1
}

#[test]
fn criterion_08_synthetic_overfit() {
    criterion(8, "synthetic end-to-end overfit", || {
        let scene = generate_scene(&SyntheticConfig::default())
            .unwrap()
            .into_scene()
            .unwrap();
        assert_eq!((scene.width(), scene.height()), (2048, 2048));
        let folds = quarter_split(2048, 2048).unwrap();
        let tiling = TilingConfig {
            patch_size: 256,
            stride: 256,
            ..TilingConfig::default()
        };
        let ds = build_fold_datasets(&scene, &folds[..1], &tiling).unwrap().remove(0);
        let model_cfg = ModelConfig::tiny(EncoderKind::ResNet, 3);
        let train = TrainConfig {
            epochs: 20,
            batch_size: 2,
            learning_rate: 2e-3,
            augment: false,
            ..TrainConfig::default()
        };
        let out = train_fold(
            &scene,
            &ds,
            &model_cfg,
            &train,
            &AugmentationConfig::default(),
            &TrainOptions::default(),
        )
        .unwrap();

        let truth_of = |q: &PixelRect| {
            merge_classes(
                &scene.labels.crop(q.x0, q.y0, q.width(), q.height()),
                ClassScheme::ThreeClass,
            )
        };
        let mut seen = ConfusionMatrix::new(3);
        for q in ds.fold.train_quarters() {
            let pred = predict_quarter(&out.model, &scene, &q, &tiling).unwrap();
            seen.merge(&confusion(&pred, &truth_of(&q), 3).unwrap()).unwrap();
        }
        let q = ds.fold.test_quarter;
        let pred = predict_quarter(&out.model, &scene, &q, &tiling).unwrap();
        let held_out = confusion(&pred, &truth_of(&q), 3).unwrap();

        let (train3, train2) = (
            macro_f1(&seen, ClassScheme::ThreeClass),
            macro_f1(&seen, ClassScheme::TwoClass),
        );
        let test2 = macro_f1(&held_out, ClassScheme::TwoClass);
        let detail = format!("train F1_3 {train3:.3}, train F1_2 {train2:.3}, held-out F1_2 {test2:.3}");
        assert!(train2 >= 0.90 && train3 >= 0.80 && test2 >= 0.75, "{detail}");
        detail
    });
}

// ---- 9: ablation machinery ----

#[test]
fn criterion_09_ablation_machinery() {
    criterion(9, "ablation machinery", || {
        let dir = tempfile::tempdir().unwrap();
        let synth = SyntheticConfig {
            width: 256,
            height: 256,
            cell: 32,
            min_side: 10,
            max_side: 24,
            ..SyntheticConfig::default()
        };
        let config = write_synthetic_project(dir.path(), &synth).unwrap();
        let schemes = [ClassScheme::ThreeClass, ClassScheme::TwoClass];
        let base = Overrides {
            epochs: Some(1),
            ..Overrides::default()
        };
        let load = |o: &Overrides| Project::load(&config, o).unwrap();

        let p = load(&base);
        p.label().unwrap();
        p.tile(false).unwrap();
        let mut runs = Vec::new();
        for o in [
            base.clone(),
            Overrides {
                augment: Some(false),
                ..base.clone()
            },
            Overrides {
                dilate: Some(false),
                ..base.clone()
            },
        ] {
            let run = load(&o);
            run.train(&[0, 1, 2, 3], 1, false).unwrap();
            let summary = run.eval(&schemes, false).unwrap();
            assert_eq!(summary.record.reports.len(), 2);
            runs.push((run, summary));
        }

        let records = collect_records(p.output()).unwrap();
        assert_eq!(records.len(), 3);
        for (axis, with, without) in [
            (ReportAxis::Augment, "with augmentation", "without augmentation"),
            (ReportAxis::Dilate, "with dilation", "without dilation"),
        ] {
            let table = comparison_report(&records, axis).unwrap();
            let lines: Vec<&str> = table.lines().collect();
            assert_eq!(lines.len(), 2 + 3, "{table}");
            for col in ["BAS_3", "F1_3", "BAS_2", "F1_2", "No Damage", "Destroyed"] {
                assert!(lines[0].contains(col), "{table}");
            }
            assert!(table.contains(with) && table.contains(without), "{table}");
            let cells = lines[0].split('|').count();
            assert!(lines.iter().all(|l| l.split('|').count() == cells));
        }

        let (single, summary) = &runs[0];
        let one = p.ensemble(std::slice::from_ref(single), &schemes, false).unwrap();
        assert_eq!(one.record.reports, summary.record.reports);
        let three = p
            .ensemble(&[single.clone(), single.clone(), single.clone()], &schemes, true)
            .unwrap();
        assert_eq!(three.record.reports, summary.record.reports);
        "3 runs, 2 comparison tables, ensembles of 1 and 3".into()
    });
}

// ---- 10: label assignment ----

fn square(id: i64, x0: f64, y0: f64, x1: f64, y1: f64) -> BuildingFootprint {
    BuildingFootprint::new(id, Polygon::rect(x0, y0, x1, y1).unwrap())
}

fn layers(f: Vec<BuildingFootprint>, p: Vec<DamagePoint>) -> (FootprintLayer, PointLayer) {
    (
        FootprintLayer {
            crs: None,
            footprints: f,
        },
        PointLayer { crs: None, points: p },
    )
}

#[test]
fn criterion_10_label_assignment() {
    criterion(10, "label assignment fixtures", || {
        let (f, p) = layers(
            vec![square(1, 0.0, 0.0, 10.0, 10.0)],
            vec![DamagePoint::new(12.0, 5.0, DamageLabel::Destroyed)],
        );
        let set = assign_point_labels(&f, &p, 7.5).unwrap();
        assert_eq!(set.label_of(&FootprintId::Num(1)), Some(Some(DamageLabel::Destroyed)));
        assert_eq!(set.unassigned_points, 0);

        let (f, p) = layers(
            vec![square(1, 0.0, 0.0, 10.0, 10.0), square(2, 16.0, 0.0, 26.0, 10.0)],
            vec![DamagePoint::new(14.0, 5.0, DamageLabel::SevereDamage)],
        );
        let set = assign_point_labels(&f, &p, 7.5).unwrap();
        assert_eq!(set.label_of(&FootprintId::Num(1)), Some(None));
        assert_eq!(
            set.label_of(&FootprintId::Num(2)),
            Some(Some(DamageLabel::SevereDamage))
        );

        let (f, p) = layers(
            vec![square(1, 0.0, 0.0, 10.0, 10.0)],
            vec![
                DamagePoint::new(3.0, 3.0, DamageLabel::ModerateDamage),
                DamagePoint::new(7.0, 7.0, DamageLabel::Destroyed),
            ],
        );
        let set = assign_point_labels(&f, &p, 7.5).unwrap();
        assert_eq!(set.label_of(&FootprintId::Num(1)), Some(Some(DamageLabel::Destroyed)));

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut buildings = Vec::new();
        for i in 0..20 {
            let (x, y) = ((i % 5) as f64 * 18.0, (i / 5) as f64 * 18.0);
            let (w, h) = (rng.random_range(6.0..12.0), rng.random_range(6.0..12.0));
            buildings.push(square(i, x, y, x + w, y + h));
        }
        let points: Vec<DamagePoint> = (0..50)
            .map(|_| {
                let label = DamageLabel::from_code(rng.random_range(0..4)).unwrap();
                DamagePoint::new(rng.random_range(-10.0..100.0), rng.random_range(-10.0..80.0), label)
            })
            .collect();
        let (f, p) = layers(buildings.clone(), points.clone());
        let reference = assign_point_labels(&f, &p, 7.5).unwrap();
        let assigned = reference.entries.iter().filter(|e| e.label.is_some()).count();
        assert!(assigned > 0 && reference.unassigned_points < 50);
        for _ in 0..100 {
            let (mut b, mut q) = (buildings.clone(), points.clone());
            b.shuffle(&mut rng);
            q.shuffle(&mut rng);
            let (f, p) = layers(b, q);
            assert_eq!(assign_point_labels(&f, &p, 7.5).unwrap(), reference);
        }
        format!("{assigned} of 20 buildings labeled, 100 shuffles")
    });
}
