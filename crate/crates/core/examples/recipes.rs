//! Running a checked-in experiment from code, with a config override.

use natlab::recipes::{Recipe, RecipeSpec};

fn main() -> natlab::Result<()> {
    for r in Recipe::ALL {
        println!("{:<22} shared lab: {}", r.name(), r.uses_lab());
    }
    let mut spec = RecipeSpec::parse(Recipe::Theorem1.config_text())?;
    spec.seed = 7;
    spec.params.insert("toys".into(), "10".into());
    let report = Recipe::Theorem1.run(&spec, None)?;
    print!("{}", report.summary_text());
    let out = std::env::temp_dir().join("natlab-theorem1-example");
    report.write(&out)?;
    println!(
        "{} records written to {}",
        report.records.len(),
        out.display()
    );
    Ok(())
}
