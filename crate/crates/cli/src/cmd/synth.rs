use std::path::Path;

use farmlight_core::synthgen::{default_world, gen_dataset, DatasetManifest, Split};

use crate::error::CliError;

pub fn gen(out: &Path, per_class: [usize; 3], seed: u64) -> Result<Vec<DatasetManifest>, CliError> {
    let world = default_world();
    Split::ALL
        .iter()
        .zip(per_class)
        .map(|(&split, n)| {
            let counts = vec![n; world.num_classes()];
            let (path, m) = gen_dataset(&world, &counts, seed, split, out)?;
            tracing::info!(path = %path.display(), samples = m.total(), "split written");
            Ok(m)
        })
        .collect()
}
