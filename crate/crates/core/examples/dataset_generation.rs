//! Build a seeded dataset, write it as JSON lines and read it back.

use std::io::BufReader;

use protosteer::gridworld::{build_dataset, read_dataset, write_dataset, DataConfig, Split};

fn main() -> protosteer::Result<()> {
    let cfg = DataConfig {
        count: 200,
        ..DataConfig::default()
    };
    let records = build_dataset(&cfg, 7)?;
    for split in [Split::Train, Split::Validation, Split::Test] {
        println!("{split:?}: {}", records.iter().filter(|r| r.split == split).count());
    }
    let extrapolation = records.iter().filter(|r| r.grid.is_extrapolation()).count();
    println!("extrapolation-size grids: {extrapolation}");

    let mut buf = Vec::new();
    write_dataset(&records, &mut buf)?;
    let back = read_dataset(BufReader::new(buf.as_slice()))?;
    assert_eq!(back, records);
    println!("{} bytes, first line:\n{}", buf.len(), records[0].to_json_line());
    Ok(())
}
