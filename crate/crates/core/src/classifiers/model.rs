use super::lbd::sigmoid;
use super::{argmax, softmax_rows, LbdDetector, LlcHead};
use crate::data::{Dataset, Preprocessor, BENIGN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vae::VaeModel;

/// Anything that maps raw flows to class probabilities.
pub trait FlowClassifier {
    fn classes(&self) -> &[String];

    fn benign_index(&self) -> usize;

    /// One probability vector per flow, ordered like [`FlowClassifier::classes`].
    fn predict_proba(&self, ds: &Dataset) -> Result<Vec<Vec<f64>>>;

    fn predict(&self, ds: &Dataset) -> Result<Vec<usize>> {
        Ok(self.predict_proba(ds)?.iter().map(|p| argmax(p)).collect())
    }

    /// Labels of `ds` in this classifier's class indices. Multiclass data
    /// collapses onto a benign/malicious model.
    fn align_labels(&self, ds: &Dataset) -> Result<Vec<usize>> {
        let mine = self.classes();
        let theirs = ds.schema().classes();
        if theirs == mine {
            return Ok(ds.labels().to_vec());
        }
        if mine.len() == 2 && !ds.schema().is_binary() {
            let b = ds.to_binary();
            if b.schema().classes() == mine {
                return Ok(b.labels().to_vec());
            }
        }
        Err(Error::Schema(format!(
            "dataset classes {theirs:?} do not match model classes {mine:?}"
        )))
    }
}

#[derive(Clone, Debug)]
pub enum Head {
    None,
    Llc(LlcHead),
    Lbd(LbdDetector),
}

impl Head {
    pub fn kind(&self) -> &'static str {
        match self {
            Head::None => "none",
            Head::Llc(_) => "llc",
            Head::Lbd(_) => "lbd",
        }
    }
}

/// A VAE with its detection head and the preprocessing it was trained with.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub vae: VaeModel,
    pub head: Head,
    pub preset: String,
    pub prep: Preprocessor,
    pub classes: Vec<String>,
}

impl TrainedModel {
    /// Probabilities for already-preprocessed rows.
    pub fn infer_scaled(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        match &self.head {
            Head::Llc(h) => {
                let (mu, _) = self.vae.encode(x)?;
                let p = softmax_rows(&h.logits(&mu)?);
                Ok((0..p.rows()).map(|r| p.row(r).to_vec()).collect())
            }
            Head::Lbd(d) => {
                let benign = self.benign_index();
                Ok(self
                    .vae
                    .rloss_per_flow(x)?
                    .into_iter()
                    .map(|r| {
                        let s = sigmoid(d.w * r + d.b);
                        let mut p = vec![s; 2];
                        p[benign] = 1.0 - s;
                        p
                    })
                    .collect())
            }
            Head::None => Err(Error::State("model has no detection head".into())),
        }
    }

    /// Preprocesses raw flows into the model's input tensor.
    pub fn prepare(&self, ds: &Dataset) -> Result<Tensor> {
        self.prep.apply(ds)?.to_tensor()
    }

    /// Probability that each flow is benign.
    pub fn prob_benign(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let b = self.benign_index();
        Ok(self.predict_proba(ds)?.into_iter().map(|p| p[b]).collect())
    }

    /// Drops the decoder for classifier heads, which never use it.
    pub fn detach_decoder(&mut self) -> Result<()> {
        if matches!(self.head, Head::Lbd(_)) {
            return Err(Error::State(
                "the two-stage detector needs its decoder".into(),
            ));
        }
        self.vae.detach_decoder();
        Ok(())
    }
}

impl FlowClassifier for TrainedModel {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn benign_index(&self) -> usize {
        self.classes.iter().position(|c| c == BENIGN).unwrap_or(0)
    }

    fn predict_proba(&self, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
        self.infer_scaled(&self.prepare(ds)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{train_llc, TrainOptions};
    use crate::data::{gen_synthetic, select_features, ScalingStrategy, SyntheticSpec};
    use crate::preset::preset;
    use crate::rng::RngStream;

    fn trained() -> (TrainedModel, Dataset) {
        let names: Vec<String> = crate::data::TOP40_FEATURES
            .iter()
            .map(|s| s.to_string())
            .collect();
        let d = gen_synthetic(&SyntheticSpec::two_cluster(names, 50, 4.0, 3).unwrap()).unwrap();
        let mut p = preset("4a").unwrap();
        p.scaling = ScalingStrategy::None;
        let opts = TrainOptions {
            steps: Some(5),
            batch_size: 32,
            ..TrainOptions::default()
        };
        (
            train_llc(&d, &d.subset(&[]), &p, &opts, &RngStream::new(1))
                .unwrap()
                .0,
            d,
        )
    }

    #[test]
    fn inference_does_not_mutate() {
        let (m, d) = trained();
        let before = crate::nn::Parameterized::checksum(&m.vae);
        let a = m.predict_proba(&d).unwrap();
        let b = m.predict_proba(&d).unwrap();
        assert_eq!(a, b);
        assert_eq!(before, crate::nn::Parameterized::checksum(&m.vae));
    }

    #[test]
    fn detached_decoder_keeps_predictions() {
        let (mut m, d) = trained();
        let a = m.predict(&d).unwrap();
        m.detach_decoder().unwrap();
        assert!(m.vae.decoder.is_none());
        assert_eq!(a, m.predict(&d).unwrap());
    }

    #[test]
    fn missing_feature_is_named() {
        let (m, d) = trained();
        let keep: Vec<String> = d.schema().features()[1..].to_vec();
        let cut = select_features(&d, &keep).unwrap();
        match m.predict(&cut) {
            Err(Error::Schema(msg)) => assert!(msg.contains(&d.schema().features()[0])),
            other => panic!("expected schema error, got {other:?}"),
        }
    }
}
