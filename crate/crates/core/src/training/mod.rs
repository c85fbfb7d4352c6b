//! Joint objective, optimizer, training loop and checkpoints.

mod checkpoint;
mod config;
mod losses;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_MAGIC};
pub use config::{TrainConfig, Window, CONFIG_SCHEMA};
pub use losses::{ce_from_distribution, ce_loss, joint_loss, nll_loss, Reduction};
pub use optim::{warmup_lr, AdamW, ADAM_EPS};

use crate::corpus::{
    build_vocab, load_corpus, make_examples_all, Dialogue, LabelSet, TrainingExample, Vocab,
};
use crate::encoders::{
    provide_intention, ConstantProvider, IntentionProvider, LookupProvider, ProviderKind,
    TemplateProvider, TurnKey,
};
use crate::error::{Error, Result};
use crate::model::{Network, Prepared};
use crate::numerics::{ParamStore, Tape, Var};

/// Corpus, vocabulary and carved examples named by a config.
pub struct Dataset {
    pub labels: LabelSet,
    pub vocab: Vocab,
    pub dialogues: Vec<Dialogue>,
    pub examples: Vec<TrainingExample>,
}

pub fn make_provider(
    kind: ProviderKind,
    config: &TrainConfig,
) -> Result<Box<dyn IntentionProvider>> {
    Ok(match kind {
        ProviderKind::Lookup => Box::new(LookupProvider::load(&config.intentions)?),
        ProviderKind::Template => Box::new(TemplateProvider),
        ProviderKind::Constant => Box::new(ConstantProvider),
    })
}

/// Fills `intention_text` from the last seeker utterance of each example.
pub fn fill_intentions(
    examples: &mut [TrainingExample],
    dialogues: &[Dialogue],
    provider: &dyn IntentionProvider,
) -> Result<()> {
    for ex in examples {
        let text = &dialogues[ex.dialogue_index].turns[ex.seeker_turn].text;
        let key = TurnKey {
            dialogue: ex.dialogue_index,
            turn: ex.seeker_turn,
        };
        ex.intention_text = provide_intention(provider, key, text)?;
    }
    Ok(())
}

pub fn load_labels(config: &TrainConfig) -> Result<LabelSet> {
    if config.labels.as_os_str().is_empty() {
        Ok(LabelSet::esconv())
    } else {
        LabelSet::load(&config.labels)
    }
}

/// Loads the corpus and carves examples. `vocab` overrides the config's
/// vocabulary source (used when evaluating a checkpoint).
pub fn load_dataset(
    config: &TrainConfig,
    labels: LabelSet,
    vocab: Option<Vocab>,
) -> Result<Dataset> {
    let dialogues = load_corpus(&config.corpus, &labels)?;
    let vocab = match vocab {
        Some(v) => v,
        None if config.vocab.as_os_str().is_empty() => build_vocab(&dialogues, config.min_freq)?,
        None => Vocab::load(&config.vocab)?,
    };
    let mut examples = make_examples_all(&dialogues, &vocab, config.max_len)?;
    let provider = make_provider(config.provider, config)?;
    fill_intentions(&mut examples, &dialogues, provider.as_ref())?;
    Ok(Dataset {
        labels,
        vocab,
        dialogues,
        examples,
    })
}

pub struct LossParts {
    pub l1: Var,
    pub l2: Var,
    pub total: Var,
}

/// Teacher-forced `λ1·L1 + λ2·L2` for one example.
pub fn example_loss(
    net: &Network,
    tape: &mut Tape,
    store: &ParamStore,
    ex: &Prepared,
    lambda1: f64,
    lambda2: f64,
    reduction: Reduction,
) -> Result<LossParts> {
    let out = net.forward(tape, store, ex)?;
    let l1 = nll_loss(tape, out.logits, &ex.target_ids[1..], reduction)?;
    let l2 = ce_loss(tape, out.class_logits, ex.label)?;
    let total = joint_loss(tape, l1, l2, lambda1, lambda2)?;
    Ok(LossParts { l1, l2, total })
}

/// Batch-mean losses of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub l1: f64,
    pub l2: f64,
    pub loss: f64,
    pub lr: f64,
}

impl StepLog {
    pub const HEADER: &'static str = "step\tL1\tL2\tL\tlr";

    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.step, self.l1, self.l2, self.loss, self.lr
        )
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub net: Network,
    pub store: ParamStore,
    pub opt: AdamW,
    pub examples: Vec<Prepared>,
    pub epoch: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        vocab: &Vocab,
        labels: usize,
        examples: &[TrainingExample],
    ) -> Result<Self> {
        config.validate()?;
        if examples.is_empty() {
            return Err(Error::Validation("no training examples".into()));
        }
        let (net, store) = Network::new(config.model_config(vocab.len(), labels), config.seed)?;
        let examples = examples
            .iter()
            .map(|e| net.prepare(e, vocab))
            .collect::<Result<Vec<_>>>()?;
        let opt = AdamW::new(
            &store,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.weight_decay,
            config.warmup_steps,
        );
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            net,
            store,
            opt,
            examples,
            epoch: 0,
            rng,
        })
    }

    pub fn step(&self) -> u64 {
        self.opt.step
    }

    fn capped(&self) -> bool {
        self.config.max_steps > 0 && self.opt.step >= self.config.max_steps
    }

    /// Accumulates batch-mean gradients over `batch` and takes one step.
    pub fn train_step(&mut self, batch: &[usize]) -> Result<StepLog> {
        let scale = 1.0 / batch.len() as f64;
        let lambda2 = self.config.effective_lambda2();
        let (mut l1, mut l2, mut loss) = (0.0, 0.0, 0.0);
        for &i in batch {
            let mut tape = Tape::new();
            let parts = example_loss(
                &self.net,
                &mut tape,
                &self.store,
                &self.examples[i],
                self.config.lambda1,
                lambda2,
                self.config.loss_reduction,
            )?;
            l1 += scale * tape.value(parts.l1).item()?;
            l2 += scale * tape.value(parts.l2).item()?;
            loss += scale * tape.value(parts.total).item()?;
            let scaled = tape.scale(parts.total, scale);
            tape.backward(scaled, &mut self.store)?;
        }
        let lr = self.opt.step(&mut self.store)?;
        Ok(StepLog {
            step: self.opt.step,
            l1,
            l2,
            loss,
            lr,
        })
    }

    /// One shuffled pass. Returns `false` once the step cap is reached.
    pub fn train_epoch(&mut self, on_step: &mut dyn FnMut(&StepLog) -> Result<()>) -> Result<bool> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut self.rng);
        for batch in order.chunks(self.config.batch_size) {
            if self.capped() {
                return Ok(false);
            }
            let log = self.train_step(batch)?;
            on_step(&log)?;
        }
        self.epoch += 1;
        Ok(!self.capped())
    }

    /// Runs the configured epochs. `on_epoch` fires after every
    /// `checkpoint_every` epochs and after the last one.
    pub fn fit(
        &mut self,
        on_step: &mut dyn FnMut(&StepLog) -> Result<()>,
        on_epoch: &mut dyn FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        while (self.epoch as usize) < self.config.epochs {
            let more = self.train_epoch(on_step)?;
            let last = !more || self.epoch as usize == self.config.epochs;
            if last || (self.epoch as usize).is_multiple_of(self.config.checkpoint_every) {
                on_epoch(self)?;
            }
            if !more {
                break;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self, labels: &LabelSet, vocab: &Vocab) -> Checkpoint {
        Checkpoint::capture(
            &self.config,
            labels,
            vocab,
            &self.store,
            &self.opt,
            self.opt.step,
            self.epoch,
        )
    }
}
