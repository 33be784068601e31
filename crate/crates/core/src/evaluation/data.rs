use serde::{Deserialize, Serialize};

use crate::math::sigmoid;
use crate::model::Model;
use crate::stimulus::NATURAL_CONDITION;
use crate::{Error, Image, Result};

/// Subset of stimuli an analysis runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusSplit {
    #[default]
    All,
    Controversial,
    Natural,
}

impl StimulusSplit {
    pub fn includes(self, condition: &str) -> bool {
        match self {
            StimulusSplit::All => true,
            StimulusSplit::Controversial => condition != NATURAL_CONDITION,
            StimulusSplit::Natural => condition == NATURAL_CONDITION,
        }
    }
}

impl std::str::FromStr for StimulusSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(StimulusSplit::All),
            "controversial" => Ok(StimulusSplit::Controversial),
            "natural" => Ok(StimulusSplit::Natural),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// Subject ratings `p̂_s(y|x)` with a missing mask. Cells are stored
/// subject-major, then stimulus, then class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ResponseMatrixWire", into = "ResponseMatrixWire")]
pub struct ResponseMatrix {
    subjects: Vec<String>,
    stimuli: Vec<String>,
    conditions: Vec<String>,
    num_classes: usize,
    values: Vec<Option<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ResponseMatrixWire {
    subjects: Vec<String>,
    stimuli: Vec<String>,
    conditions: Vec<String>,
    num_classes: usize,
    /// `values[subject][stimulus][class]`, `null` when missing.
    values: Vec<Vec<Vec<Option<f64>>>>,
}

impl From<ResponseMatrix> for ResponseMatrixWire {
    fn from(m: ResponseMatrix) -> Self {
        let per_subject = m.stimuli.len() * m.num_classes;
        let values = if per_subject == 0 {
            vec![Vec::new(); m.subjects.len()]
        } else {
            m.values
                .chunks(per_subject)
                .map(|s| s.chunks(m.num_classes).map(<[_]>::to_vec).collect())
                .collect()
        };
        ResponseMatrixWire { subjects: m.subjects, stimuli: m.stimuli, conditions: m.conditions, num_classes: m.num_classes, values }
    }
}

impl TryFrom<ResponseMatrixWire> for ResponseMatrix {
    type Error = Error;

    fn try_from(w: ResponseMatrixWire) -> Result<Self> {
        let mut m = ResponseMatrix::new(w.subjects, w.stimuli, w.conditions, w.num_classes)?;
        if w.values.len() != m.subjects.len() {
            return Err(Error::Format("response rows do not match the subject list".into()));
        }
        for (s, rows) in w.values.iter().enumerate() {
            if rows.len() != m.stimuli.len() {
                return Err(Error::Format("response rows do not match the stimulus list".into()));
            }
            for (x, cells) in rows.iter().enumerate() {
                if cells.len() != m.num_classes {
                    return Err(Error::Format("response row has the wrong number of classes".into()));
                }
                for (c, v) in cells.iter().enumerate() {
                    if let Some(v) = v {
                        m.set(s, x, c, *v)?;
                    }
                }
            }
        }
        Ok(m)
    }
}

impl ResponseMatrix {
    /// An all-missing matrix.
    pub fn new(subjects: Vec<String>, stimuli: Vec<String>, conditions: Vec<String>, num_classes: usize) -> Result<Self> {
        if stimuli.len() != conditions.len() {
            return Err(Error::invalid("every stimulus needs exactly one condition"));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        let values = vec![None; subjects.len() * stimuli.len() * num_classes];
        Ok(ResponseMatrix { subjects, stimuli, conditions, num_classes, values })
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn stimuli(&self) -> &[String] {
        &self.stimuli
    }

    pub fn conditions(&self) -> &[String] {
        &self.conditions
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn num_stimuli(&self) -> usize {
        self.stimuli.len()
    }

    /// Cells per subject (`stimuli × classes`).
    pub fn cells(&self) -> usize {
        self.stimuli.len() * self.num_classes
    }

    fn index(&self, subject: usize, stimulus: usize, class: usize) -> usize {
        (subject * self.stimuli.len() + stimulus) * self.num_classes + class
    }

    pub fn get(&self, subject: usize, stimulus: usize, class: usize) -> Option<f64> {
        self.values[self.index(subject, stimulus, class)]
    }

    pub fn set(&mut self, subject: usize, stimulus: usize, class: usize, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("response {value} outside [0, 1]")));
        }
        if subject >= self.subjects.len() || stimulus >= self.stimuli.len() || class >= self.num_classes {
            return Err(Error::invalid("response index out of range"));
        }
        let i = self.index(subject, stimulus, class);
        self.values[i] = Some(value);
        Ok(())
    }

    pub fn clear(&mut self, subject: usize, stimulus: usize, class: usize) {
        let i = self.index(subject, stimulus, class);
        self.values[i] = None;
    }

    /// All cells of one subject, stimulus-major.
    pub fn subject_row(&self, subject: usize) -> &[Option<f64>] {
        let n = self.cells();
        &self.values[subject * n..(subject + 1) * n]
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn stimulus_index(&self, id: &str) -> Option<usize> {
        self.stimuli.iter().position(|s| s == id)
    }

    /// Stimulus indices whose condition belongs to `split`.
    pub fn split_indices(&self, split: StimulusSplit) -> Vec<usize> {
        (0..self.stimuli.len()).filter(|&i| split.includes(&self.conditions[i])).collect()
    }

    /// The matrix restricted to the given stimuli, in the given order.
    pub fn restrict(&self, stimuli: &[usize]) -> ResponseMatrix {
        let mut out = ResponseMatrix {
            subjects: self.subjects.clone(),
            stimuli: stimuli.iter().map(|&i| self.stimuli[i].clone()).collect(),
            conditions: stimuli.iter().map(|&i| self.conditions[i].clone()).collect(),
            num_classes: self.num_classes,
            values: Vec::with_capacity(self.subjects.len() * stimuli.len() * self.num_classes),
        };
        for s in 0..self.subjects.len() {
            for &x in stimuli {
                for c in 0..self.num_classes {
                    out.values.push(self.get(s, x, c));
                }
            }
        }
        out
    }
}

/// Calibrated logits `l_M(y|x)` of one model on the evaluation stimuli;
/// predictions are their sigmoids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    pub model: String,
    pub stimuli: Vec<String>,
    pub num_classes: usize,
    /// Stimulus-major `(stimulus, class)` logits.
    pub logits: Vec<f64>,
}

impl PredictionMatrix {
    pub fn new(model: impl Into<String>, stimuli: Vec<String>, num_classes: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != stimuli.len() * num_classes {
            return Err(Error::invalid("logit count does not match stimuli × classes"));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite logit"));
        }
        Ok(PredictionMatrix { model: model.into(), stimuli, num_classes, logits })
    }

    /// Evaluates a calibrated model on the stimulus images.
    pub fn from_model(model: &Model, stimuli: &[(String, Image)]) -> Result<Self> {
        let mut logits = Vec::with_capacity(stimuli.len() * model.num_classes());
        for (_, image) in stimuli {
            logits.extend(model.calibrated_logits(image)?);
        }
        Self::new(model.id.clone(), stimuli.iter().map(|(id, _)| id.clone()).collect(), model.num_classes(), logits)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.iter().map(|&l| sigmoid(l)).collect()
    }

    pub fn restrict(&self, stimuli: &[usize]) -> PredictionMatrix {
        let k = self.num_classes;
        PredictionMatrix {
            model: self.model.clone(),
            stimuli: stimuli.iter().map(|&i| self.stimuli[i].clone()).collect(),
            num_classes: k,
            logits: stimuli.iter().flat_map(|&i| self.logits[i * k..(i + 1) * k].iter().copied()).collect(),
        }
    }

    /// Reorders the stimuli to match `responses`; fails if any is absent.
    pub fn aligned_to(&self, responses: &ResponseMatrix) -> Result<PredictionMatrix> {
        if self.num_classes != responses.num_classes() {
            return Err(Error::invalid(format!("model {} has a different class count", self.model)));
        }
        let order = responses
            .stimuli()
            .iter()
            .map(|id| {
                self.stimuli
                    .iter()
                    .position(|s| s == id)
                    .ok_or_else(|| Error::NotFound(format!("model {} has no prediction for stimulus {id}", self.model)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.restrict(&order))
    }
}
