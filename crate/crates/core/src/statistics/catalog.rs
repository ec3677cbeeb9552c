use std::fmt::Write as _;

use super::StatError;
use crate::event_model::NodeType;

/// Default decay for every active GWSR side.
pub const DEFAULT_DECAY: f64 = 5.0;
/// Value used to switch a GWSR side off.
pub const INACTIVE_SIDE: f64 = -1.0;

/// Decay parameters and roles of one geometrically weighted subset repetition.
/// A negative `kappa` (`lambda`) drops the source (target) side entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GwsrConfig {
    pub kappa: f64,
    pub lambda: f64,
    pub source: NodeType,
    pub target: NodeType,
}

impl GwsrConfig {
    pub fn new(source: NodeType, target: NodeType, kappa: f64, lambda: f64) -> Result<Self, StatError> {
        let cfg = GwsrConfig { kappa, lambda, source, target };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StatError> {
        if self.source == self.target {
            return Err(StatError::Config(format!(
                "source and target roles must differ (both {})",
                self.source
            )));
        }
        if !self.kappa.is_finite() || !self.lambda.is_finite() {
            return Err(StatError::Config("decay parameters must be finite".into()));
        }
        if self.kappa < 0.0 && self.lambda < 0.0 {
            return Err(StatError::Config("kappa and lambda cannot both be negative".into()));
        }
        Ok(())
    }

    pub fn source_active(&self) -> bool {
        self.kappa >= 0.0
    }

    pub fn target_active(&self) -> bool {
        self.lambda >= 0.0
    }
}

/// Two-path closure v1 – v2 – v3: endpoint types and intermediary type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClosureSpec {
    pub outer_left: NodeType,
    pub inner: NodeType,
    pub outer_right: NodeType,
}

impl ClosureSpec {
    pub fn new(outer_left: NodeType, inner: NodeType, outer_right: NodeType) -> Self {
        ClosureSpec { outer_left, inner, outer_right }
    }

    /// The endpoint-swapped spec, which denotes the same statistic.
    pub fn mirrored(self) -> Self {
        ClosureSpec::new(self.outer_right, self.inner, self.outer_left)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectKind {
    Gwsr(GwsrConfig),
    Closure(ClosureSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectDef {
    pub name: String,
    pub kind: EffectKind,
}

impl EffectDef {
    /// Whether the effect depends on nodes of type `ty`.
    pub fn mentions(&self, ty: NodeType) -> bool {
        self.name.split('.').any(|tok| tok == ty.token())
    }
}

/// The 24 effect names in design-matrix column order.
pub const STANDARD_EFFECTS: [&str; 24] = [
    "sub.rep.aut",
    "sub.rep.ref",
    "sub.rep.key",
    "sub.rep.aut.ref",
    "sub.rep.aut.key",
    "sub.rep.key.ref",
    "closure.ref.aut.ref",
    "closure.ref.ref.ref",
    "closure.ref.key.ref",
    "closure.aut.aut.key",
    "closure.aut.key.key",
    "closure.aut.ref.key",
    "closure.key.key.key",
    "closure.key.aut.key",
    "closure.key.aut.ref",
    "closure.key.ref.ref",
    "closure.key.key.ref",
    "closure.key.ref.key",
    "closure.aut.aut.ref",
    "closure.aut.ref.ref",
    "closure.aut.key.ref",
    "closure.aut.aut.aut",
    "closure.aut.ref.aut",
    "closure.aut.key.aut",
];

/// Resolves an effect name with the given default decay for active sides.
pub fn definition(name: &str, decay: f64) -> Result<EffectKind, StatError> {
    use NodeType::*;
    let gw = |s, t, k, l| GwsrConfig::new(s, t, k, l).map(EffectKind::Gwsr);
    match name {
        "sub.rep.aut" => gw(Author, Reference, decay, INACTIVE_SIDE),
        "sub.rep.ref" => gw(Author, Reference, INACTIVE_SIDE, decay),
        "sub.rep.key" => gw(Author, Keyword, INACTIVE_SIDE, decay),
        "sub.rep.aut.ref" => gw(Author, Reference, decay, decay),
        "sub.rep.aut.key" => gw(Author, Keyword, decay, decay),
        "sub.rep.key.ref" => gw(Keyword, Reference, decay, decay),
        _ => {
            let toks: Vec<&str> = name.split('.').collect();
            match toks.as_slice() {
                ["closure", l, i, r] => {
                    let ty = |tok: &str| NodeType::from_token(tok).ok_or_else(|| StatError::UnknownEffect(name.into()));
                    Ok(EffectKind::Closure(ClosureSpec::new(ty(l)?, ty(i)?, ty(r)?)))
                }
                _ => Err(StatError::UnknownEffect(name.into())),
            }
        }
    }
}

/// Ordered list of effects; the order is the design-matrix column order.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectCatalog {
    effects: Vec<EffectDef>,
    strict_closure: bool,
}

impl Default for EffectCatalog {
    fn default() -> Self {
        Self::standard()
    }
}

impl EffectCatalog {
    /// All 24 effects with decay 5 on every active side.
    pub fn standard() -> Self {
        Self::with_decay(DEFAULT_DECAY, DEFAULT_DECAY)
    }

    /// All 24 effects; `kappa` replaces the decay of active source sides and
    /// `lambda` that of active target sides.
    pub fn with_decay(kappa: f64, lambda: f64) -> Self {
        let effects = STANDARD_EFFECTS
            .iter()
            .map(|&name| {
                let mut kind = definition(name, DEFAULT_DECAY).expect("standard effect");
                if let EffectKind::Gwsr(cfg) = &mut kind {
                    if cfg.source_active() {
                        cfg.kappa = kappa;
                    }
                    if cfg.target_active() {
                        cfg.lambda = lambda;
                    }
                }
                EffectDef { name: name.to_string(), kind }
            })
            .collect();
        EffectCatalog { effects, strict_closure: false }
    }

    pub fn from_effects(effects: Vec<EffectDef>) -> Result<Self, StatError> {
        for (i, e) in effects.iter().enumerate() {
            if effects[..i].iter().any(|o| o.name == e.name) {
                return Err(StatError::Config(format!("duplicate effect {}", e.name)));
            }
            if let EffectKind::Gwsr(cfg) = e.kind {
                cfg.validate()?;
            }
        }
        Ok(EffectCatalog { effects, strict_closure: false })
    }

    /// Parses the catalog file: one `name[,kappa,lambda]` per line; `#` starts
    /// a comment. Names without overrides take defaults from `base`.
    pub fn parse_config(text: &str, base: &EffectCatalog) -> Result<Self, StatError> {
        let mut effects = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let name = fields[0];
            let mut kind = match base.get(name) {
                Some(def) => def.kind,
                None => definition(name, DEFAULT_DECAY)?,
            };
            match (fields.len(), &mut kind) {
                (1, _) => {}
                (3, EffectKind::Gwsr(cfg)) => {
                    let num = |s: &str| {
                        s.parse::<f64>()
                            .map_err(|_| StatError::Config(format!("line {}: bad number {s:?}", i + 1)))
                    };
                    cfg.kappa = num(fields[1])?;
                    cfg.lambda = num(fields[2])?;
                }
                (3, EffectKind::Closure(_)) => {
                    return Err(StatError::Config(format!(
                        "line {}: closure effect {name} takes no decay parameters",
                        i + 1
                    )))
                }
                _ => return Err(StatError::Config(format!("line {}: expected name[,kappa,lambda]", i + 1))),
            }
            effects.push(EffectDef { name: name.to_string(), kind });
        }
        let mut cat = Self::from_effects(effects)?;
        cat.strict_closure = base.strict_closure;
        Ok(cat)
    }

    /// Serializes to the catalog file format.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for e in &self.effects {
            match e.kind {
                EffectKind::Gwsr(cfg) => writeln!(out, "{},{},{}", e.name, cfg.kappa, cfg.lambda),
                EffectKind::Closure(_) => writeln!(out, "{}", e.name),
            }
            .expect("write to string");
        }
        out
    }

    /// Requires both legs of a closure two-path to come from distinct past
    /// events (events containing all three nodes are not counted).
    pub fn with_strict_closure(mut self, strict: bool) -> Self {
        self.strict_closure = strict;
        self
    }

    pub fn strict_closure(&self) -> bool {
        self.strict_closure
    }

    pub fn effects(&self) -> &[EffectDef] {
        &self.effects
    }

    pub fn names(&self) -> Vec<String> {
        self.effects.iter().map(|e| e.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&EffectDef> {
        self.effects.iter().find(|e| e.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.effects.iter().position(|e| e.name == name)
    }

    /// Sub-catalog with the named effects, in the given order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Self, StatError> {
        let effects = names
            .iter()
            .map(|n| {
                self.get(n.as_ref())
                    .cloned()
                    .ok_or_else(|| StatError::UnknownEffect(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut cat = Self::from_effects(effects)?;
        cat.strict_closure = self.strict_closure;
        Ok(cat)
    }
}
