//! Writes the synthetic set in CIFAR binary and IDX form and loads it back.

use tta_core::harness::{encode_idx, load_dataset, synthetic_dataset, write_cifar_binary, DatasetFormat};

fn main() -> tta_core::Result<()> {
    let dir = std::env::temp_dir().join("tta-datasets-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let data = synthetic_dataset(20, 7, 0);

    let bin = dir.join("test_batch.bin");
    write_cifar_binary(&data, &bin)?;
    let back = load_dataset(&bin, DatasetFormat::CifarBinary)?;
    println!("cifar: {} images {:?}, labels match {}", back.len(), back.image_shape(), back.labels == data.labels);

    // IDX wants grayscale; keep the first channel.
    let [_, h, w] = data.image_shape();
    let pixels: Vec<u8> = (0..data.len())
        .flat_map(|i| data.image(i).plane(0).iter().map(|v| (v * 255.0).round() as u8).collect::<Vec<_>>())
        .collect();
    let labels: Vec<u8> = data.labels.iter().map(|&l| l as u8).collect();
    std::fs::write(dir.join("t10k-images-idx3-ubyte"), encode_idx(&[data.len(), h, w], &pixels)).expect("write");
    std::fs::write(dir.join("t10k-labels-idx1-ubyte"), encode_idx(&[data.len()], &labels)).expect("write");
    let idx = load_dataset(dir.join("t10k-images-idx3-ubyte"), DatasetFormat::Idx)?;
    println!("idx: {} images {:?}, {} classes", idx.len(), idx.image_shape(), idx.classes);

    let truncated = dir.join("short.bin");
    std::fs::write(&truncated, &std::fs::read(&bin).expect("read")[..5000]).expect("write");
    match load_dataset(&truncated, DatasetFormat::CifarBinary) {
        Err(e) => println!("truncated file: {e} (exit code {})", e.exit_code()),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
