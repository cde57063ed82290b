//! Zhang–Suen thinning of the binarized foreground.

use crate::image::Image;

/// Binarizes at `threshold` (foreground `>= threshold`), thins to a
/// one-pixel skeleton and returns the skeleton as a 0/1 image.
pub fn thin_image(img: &Image, threshold: f64) -> Image {
    let (w, h) = img.dims();
    let mut mask: Vec<bool> = img.pixels().iter().map(|&p| p >= threshold).collect();
    zhang_suen(&mut mask, w, h);
    Image::from_clamped(
        w,
        h,
        mask.into_iter()
            .map(|b| if b { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// Thins `mask` in place until no pixel changes. Pixels outside the image
/// count as background.
pub fn zhang_suen(mask: &mut [bool], w: usize, h: usize) {
    assert_eq!(mask.len(), w * h);
    let at = |m: &[bool], x: isize, y: isize| -> u8 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0
        } else {
            m[y as usize * w + x as usize] as u8
        }
    };
    let mut marked = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            marked.clear();
            for y in 0..h as isize {
                for x in 0..w as isize {
                    if at(mask, x, y) == 0 {
                        continue;
                    }
                    // P2..P9 clockwise from north
                    let n = [
                        at(mask, x, y - 1),
                        at(mask, x + 1, y - 1),
                        at(mask, x + 1, y),
                        at(mask, x + 1, y + 1),
                        at(mask, x, y + 1),
                        at(mask, x - 1, y + 1),
                        at(mask, x - 1, y),
                        at(mask, x - 1, y - 1),
                    ];
                    let b: u8 = n.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| n[i] == 0 && n[(i + 1) % 8] == 1).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                    let ok = if pass == 0 {
                        p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0
                    } else {
                        p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0
                    };
                    if ok {
                        marked.push(y as usize * w + x as usize);
                    }
                }
            }
            for &i in &marked {
                mask[i] = false;
            }
            changed |= !marked.is_empty();
        }
        if !changed {
            break;
        }
    }
}
