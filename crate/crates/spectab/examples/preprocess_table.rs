//! Encode a mixed-type table: one-hot expansion, missing-value handling,
//! and train-fit standardization.
//!
//! Run with: cargo run --example preprocess_table

use std::collections::BTreeMap;

use spectab::preprocess::{self, ColumnKind};

fn main() -> anyhow::Result<()> {
    // A small CSV with a continuous column (with a missing cell), a
    // categorical column (with a missing cell -> its own category), and a
    // constant column.
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("toy.csv");
    std::fs::write(
        &path,
        "age,city,flag\n\
         34,lisbon,1\n\
         41,porto,1\n\
         ,lisbon,1\n\
         29,,1\n\
         55,porto,1\n\
         38,faro,1\n",
    )?;

    let mut kinds = BTreeMap::new();
    kinds.insert("city".to_string(), ColumnKind::Categorical);
    let raw = preprocess::load_csv(&path, &kinds)?;
    println!("loaded {} rows x {} raw columns", raw.n_rows(), raw.columns.len());

    // Row 3 has a missing continuous age and is dropped; the missing city
    // becomes a "Missing" category.
    let clean = preprocess::handle_missing(&raw)?;
    println!("after missing-value handling: {} rows", clean.n_rows());

    // Fit standardization statistics on the first three rows only, as a
    // train split would.
    let table = preprocess::encode(&clean, Some(&[0, 1, 2]))?;
    println!("encoded to {} rows x {} numeric columns", table.n_rows(), table.n_cols());
    for (g, group) in table.groups.iter().enumerate() {
        let names: Vec<&str> = group
            .iter()
            .map(|&c| {
                table.node_meta[c]
                    .category_label
                    .as_deref()
                    .unwrap_or(table.node_meta[c].original_name.as_str())
            })
            .collect();
        println!("  feature group {g}: columns {group:?} ({})", names.join(", "));
    }
    for w in &table.warnings {
        println!("  warning: {w}");
    }

    // Continuous columns are standardized with train-fit statistics.
    let age_stats = table.stats[0].expect("age is continuous");
    println!(
        "age standardized with train-fit mean {:.2}, std {:.2} (constant: {})",
        age_stats.mean, age_stats.std, age_stats.constant
    );
    Ok(())
}
