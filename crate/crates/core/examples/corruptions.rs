//! Applies every corruption at every severity to one synthetic image and
//! writes a PNG contact sheet (rows: kinds, columns: clean + severities 1-5).
//!
//! `cargo run --example corruptions -- [sheet.png]`

use tta_core::augment::Image;
use tta_core::corruptions::{corrupt, CorruptionKind, CorruptionSpec};
use tta_core::harness::synthetic_dataset;
use tta_core::rng::SeededRng;

fn blit(sheet: &mut image::RgbImage, img: &Image, col: u32, row: u32) {
    let (h, w) = (img.height() as u32, img.width() as u32);
    for y in 0..h {
        for x in 0..w {
            let px = |c| (img.get(c, y as usize, x as usize) * 255.0).round() as u8;
            sheet.put_pixel(col * w + x, row * h + y, image::Rgb([px(0), px(1), px(2)]));
        }
    }
}

fn main() -> tta_core::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "corruptions.png".into());
    let data = synthetic_dataset(1, 7, 3);
    let x = data.image(0);
    let mut sheet = image::RgbImage::new(32 * 6, 32 * CorruptionKind::ALL.len() as u32);

    println!("{:<18} L2 distance at severity 1..5", "kind");
    for (row, kind) in CorruptionKind::ALL.iter().enumerate() {
        blit(&mut sheet, &x, 0, row as u32);
        let mut dists = Vec::new();
        for sev in 1..=5u8 {
            let y = corrupt(&x, CorruptionSpec::new(*kind, sev)?, &mut SeededRng::new(0))?;
            dists.push(format!("{:6.2}", x.l2_distance(&y)));
            blit(&mut sheet, &y, sev as u32, row as u32);
        }
        println!("{:<18} {}", kind.name(), dists.join(" "));
    }
    sheet.save(&out).expect("write png");
    println!("wrote {out}");
    Ok(())
}
