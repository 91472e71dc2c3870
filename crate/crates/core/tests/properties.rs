use braille_core::annotation::{CellRecord, Frame, PageAnnotation};
use braille_core::eval::{match_dots, Counts};
use braille_core::grid::{decode_pattern, mirror_pattern};
use braille_core::raster::{normalize_gray, rotate, IntegralImage};
use braille_core::segmentation::{extract_regions, segment, PixelClass, Thresholds};
use braille_core::{GrayImage, Point};
use proptest::prelude::*;
use std::path::Path;

fn image() -> impl Strategy<Value = GrayImage> {
    (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h).prop_map(move |px| GrayImage::new(w, h, px).unwrap())
    })
}

fn points(max: usize) -> impl Strategy<Value = Vec<Point>> {
    proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0).prop_map(|(x, y)| Point::new(x, y)), 0..max)
}

/// Independent 8-connected flood fill over one class.
fn flood_fill_count(labels: &[PixelClass], w: usize, h: usize, min_area: usize) -> usize {
    let mut seen = vec![false; labels.len()];
    let mut count = 0;
    for start in 0..labels.len() {
        if seen[start] || labels[start] == PixelClass::Background {
            continue;
        }
        let class = labels[start];
        let mut stack = vec![start];
        seen[start] = true;
        let mut area = 0;
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && labels[j] == class {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if area >= min_area {
            count += 1;
        }
    }
    count
}

proptest! {
    #[test]
    fn normalization_is_idempotent(img in image()) {
        let once = normalize_gray(&img).image;
        prop_assert_eq!(normalize_gray(&once).image, once);
    }

    #[test]
    fn integral_sums_match_brute_force(img in image(), a in 0usize..25, b in 0usize..25, c in 0usize..25, d in 0usize..25) {
        let ii = IntegralImage::new(&img);
        let (x0, x1) = (a.min(b).min(img.width()), a.max(b).min(img.width()));
        let (y0, y1) = (c.min(d).min(img.height()), c.max(d).min(img.height()));
        let brute: u64 = (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).map(|(x, y)| img.get(x, y) as u64).sum();
        prop_assert_eq!(ii.sum(x0, y0, x1, y1), brute);
    }

    #[test]
    fn zero_rotation_is_identity(img in image()) {
        prop_assert_eq!(rotate(&img, 0.0), img);
    }

    #[test]
    fn match_counts_are_consistent(pred in points(30), gt in points(30), tol in 0.5f64..15.0) {
        let m = match_dots(&pred, &gt, tol);
        prop_assert_eq!(m.tp + m.fn_, gt.len());
        prop_assert_eq!(m.tp + m.fp, pred.len());
        prop_assert_eq!(m.tp, m.pairs.len());
        prop_assert!(m.pairs.iter().all(|p| p.2 <= tol));
        let swapped = match_dots(&gt, &pred, tol);
        prop_assert_eq!(swapped.tp, m.tp);
        prop_assert_eq!((swapped.fp, swapped.fn_), (m.fn_, m.fp));
    }

    #[test]
    fn f1_is_the_harmonic_mean(tp in 1usize..1000, fp in 0usize..1000, fn_ in 0usize..1000) {
        let c = Counts { tp, fp, fn_ };
        let (p, r) = (c.precision().unwrap(), c.recall().unwrap());
        prop_assert!((c.f1().unwrap() - 2.0 / (1.0 / p + 1.0 / r)).abs() < 1e-12);
    }

    #[test]
    fn regions_match_flood_fill(img in image(), lower in 60u8..120, gap in 2u8..80) {
        let t = Thresholds { lower, upper: lower + gap, mode: lower + gap / 2 };
        let seg = segment(&img, t);
        let labels: Vec<PixelClass> = (0..img.height()).flat_map(|y| (0..img.width()).map(move |x| (x, y))).map(|(x, y)| seg.get(x, y)).collect();
        for min_area in [1, 3] {
            let regions = extract_regions(&seg, min_area);
            prop_assert_eq!(regions.len(), flood_fill_count(&labels, img.width(), img.height(), min_area));
            for r in &regions {
                prop_assert!(r.area >= min_area);
                let (x0, y0, x1, y1) = r.bbox;
                prop_assert!(r.centroid.0 >= x0 as f64 && r.centroid.0 <= x1 as f64);
                prop_assert!(r.centroid.1 >= y0 as f64 && r.centroid.1 <= y1 as f64);
            }
        }
        let counts = labels.iter().fold([0usize; 3], |mut acc, c| {
            acc[*c as usize] += 1;
            acc
        });
        prop_assert_eq!(counts.iter().sum::<usize>(), img.width() * img.height());
    }

    #[test]
    fn patterns_decode_and_mirror(p in 0u8..64) {
        let c = decode_pattern(p) as u32;
        prop_assert_eq!(c - 0x2800, p as u32);
        prop_assert_eq!(mirror_pattern(mirror_pattern(p)), p);
        prop_assert_eq!(mirror_pattern(p).count_ones(), p.count_ones());
    }

    #[test]
    fn annotation_json_round_trips(
        recto in points(20),
        verso in points(20),
        skew in -5.0f64..5.0,
        revision in 0u64..1000,
    ) {
        let mut a = PageAnnotation::new("page.png", 101, 101);
        a.recto = recto;
        a.verso = verso;
        a.skew_deg = skew;
        a.frame = Frame::Original;
        a.revision = revision;
        a.cells.push(CellRecord { row: 0, col: 0, pattern: 0, bbox: [10.0, 10.0, 29.69, 49.37] });
        let text = a.to_json().unwrap();
        let back = PageAnnotation::from_json(&text, Path::new("page.json")).unwrap();
        prop_assert_eq!(&back, &a.rounded());
        prop_assert_eq!(back.to_json().unwrap(), text);
    }
}
