use serde::{Deserialize, Serialize};

use crate::agents::{AgentCall, AgentKind};
use crate::gateway::TokenUsage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: u32,
    pub agent: AgentKind,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated: bool,
}

/// Append-only per-call token accounting for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub entries: Vec<LedgerEntry>,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_usage(&mut self, round: u32, agent: AgentKind, usage: TokenUsage, estimated: bool) {
        self.entries.push(LedgerEntry {
            round,
            agent,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            estimated,
        });
    }

    pub fn record(&mut self, round: u32, call: AgentCall) {
        self.record_usage(round, call.agent, call.usage, call.estimated);
    }

    /// Completion tokens of every call made in rounds `0..=round`.
    pub fn cumulative_completion(&self, round: u32) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.round <= round)
            .map(|e| e.completion_tokens)
            .sum()
    }

    pub fn total(&self) -> TokenUsage {
        self.entries
            .iter()
            .map(|e| TokenUsage::new(e.prompt_tokens, e.completion_tokens))
            .sum()
    }

    /// Completion tokens spent before round `round`'s program could be scored:
    /// all earlier rounds, plus the generation (and hint) calls of that round.
    /// Critiques and the revision filed under a round come after its score.
    pub fn completion_until_scored(&self, round: u32) -> u64 {
        self.entries
            .iter()
            .filter(|e| {
                e.round < round
                    || (e.round == round && matches!(e.agent, AgentKind::Generation | AgentKind::HintDescriber))
            })
            .map(|e| e.completion_tokens)
            .sum()
    }

    pub fn calls(&self) -> usize {
        self.entries.len()
    }

    pub fn calls_for(&self, agent: AgentKind) -> usize {
        self.entries.iter().filter(|e| e.agent == agent).count()
    }

    pub fn calls_in_round(&self, round: u32) -> usize {
        self.entries.iter().filter(|e| e.round == round).count()
    }

    pub fn has_estimates(&self) -> bool {
        self.entries.iter().any(|e| e.estimated)
    }
}
