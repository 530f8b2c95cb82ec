use ndarray::ArrayView1;

use crate::audio_io::AudioClip;
use crate::dsp::FrameParams;
use crate::error::{Error, Result};
use crate::selection::{kmeans, linspace_indices, SelectorKind, SelectorSpec, KMEANS_MAX_ITER, KMEANS_TOL};
use crate::textures::{TextureMatrix, TextureParams};

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Texture rows that represent the track, in track order.
///
/// KMEANSC maps each centroid to its nearest real texture; a `k` at or above
/// the texture count keeps every row.
pub fn summary_rows(textures: &TextureMatrix, selector: &SelectorSpec) -> Result<Vec<usize>> {
    let m = textures.n_textures();
    if m == 0 {
        return Err(Error::EmptyInput(format!("track {} has no textures", textures.track_id)));
    }
    if selector.k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut rows = match selector.kind {
        SelectorKind::Linspace => linspace_indices(m, selector.k),
        SelectorKind::Kmeansc if selector.k >= m => (0..m).collect(),
        SelectorKind::Kmeansc => {
            let km = kmeans(textures.values.view(), selector.k, selector.seed, KMEANS_MAX_ITER, KMEANS_TOL)?;
            km.centroids
                .outer_iter()
                .map(|c| {
                    (0..m)
                        .min_by(|&a, &b| {
                            sq_dist(textures.values.row(a), c).total_cmp(&sq_dist(textures.values.row(b), c))
                        })
                        .expect("m > 0")
                })
                .collect()
        }
        SelectorKind::Fts | SelectorKind::All => {
            return Err(Error::InvalidParameter(format!(
                "summaries need a KMEANSC or LINSPACE selector, got {selector}"
            )))
        }
    };
    rows.sort_unstable();
    rows.dedup();
    Ok(rows)
}

/// Concatenate the audio under each representative texture.
pub fn summarize_track(
    textures: &TextureMatrix,
    clip: &AudioClip,
    selector: &SelectorSpec,
    texture_params: TextureParams,
    frame_params: FrameParams,
) -> Result<AudioClip> {
    texture_params.validate()?;
    frame_params.validate()?;
    let mut out = Vec::new();
    for i in summary_rows(textures, selector)? {
        let (first, end) = texture_params.frame_range(i);
        let start = first * frame_params.hop;
        let stop = ((end - 1) * frame_params.hop + frame_params.frame_size).min(clip.len());
        if start >= stop {
            return Err(Error::DimensionMismatch {
                expected: stop,
                got: start,
            });
        }
        out.extend_from_slice(&clip.samples()[start..stop]);
    }
    AudioClip::new(out, clip.sample_rate())
}
