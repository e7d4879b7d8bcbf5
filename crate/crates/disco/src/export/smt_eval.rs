//! Minimal SMT-LIB term evaluator used to check the emitted encodings
//! against exact forward evaluation. Understands just the fragment the
//! exporter produces: `declare-const`, ordered `define-fun` chains and the
//! QF_LRA operators `+ - * / ite >= <= > < =`.

use std::collections::HashMap;

use num_traits::Zero;

use crate::rat::{self, Rat};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub enum SExpr {
    Atom(String),
    List(Vec<SExpr>),
}

#[derive(Debug, Clone)]
pub struct Script {
    pub consts: Vec<String>,
    pub defs: Vec<(String, SExpr)>,
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '(' | ')' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(c.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn parse_one(tokens: &[String], pos: &mut usize) -> Result<SExpr> {
    let bad = || Error::Schema("unbalanced s-expression".into());
    match tokens.get(*pos).ok_or_else(bad)?.as_str() {
        "(" => {
            *pos += 1;
            let mut items = Vec::new();
            while tokens.get(*pos).ok_or_else(bad)? != ")" {
                items.push(parse_one(tokens, pos)?);
            }
            *pos += 1;
            Ok(SExpr::List(items))
        }
        ")" => Err(bad()),
        atom => {
            *pos += 1;
            Ok(SExpr::Atom(atom.to_string()))
        }
    }
}

/// Parses a full SMT-LIB script, keeping declarations and definitions.
pub fn parse_script(text: &str) -> Result<Script> {
    let tokens = tokenize(text);
    let mut pos = 0;
    let mut consts = Vec::new();
    let mut defs = Vec::new();
    while pos < tokens.len() {
        let expr = parse_one(&tokens, &mut pos)?;
        let SExpr::List(items) = &expr else {
            return Err(Error::Schema("top-level atom in script".into()));
        };
        match items.first() {
            Some(SExpr::Atom(head)) if head == "declare-const" => {
                let SExpr::Atom(name) = &items[1] else {
                    return Err(Error::Schema("declare-const without a name".into()));
                };
                consts.push(name.clone());
            }
            Some(SExpr::Atom(head)) if head == "define-fun" => {
                let SExpr::Atom(name) = &items[1] else {
                    return Err(Error::Schema("define-fun without a name".into()));
                };
                // (define-fun name () Real body)
                defs.push((name.clone(), items[4].clone()));
            }
            _ => {} // set-logic, assert, check-sat
        }
    }
    Ok(Script { consts, defs })
}

#[derive(Debug, Clone, PartialEq)]
enum SmtValue {
    Num(Rat),
    Bool(bool),
}

fn eval(expr: &SExpr, env: &HashMap<String, Rat>) -> Result<SmtValue> {
    match expr {
        SExpr::Atom(a) => {
            if let Some(v) = env.get(a) {
                return Ok(SmtValue::Num(v.clone()));
            }
            if a.chars().next().is_some_and(|c| c.is_ascii_digit()) {
                return Ok(SmtValue::Num(rat::parse_decimal(a)?));
            }
            match a.as_str() {
                "true" => Ok(SmtValue::Bool(true)),
                "false" => Ok(SmtValue::Bool(false)),
                other => Err(Error::Schema(format!("unbound symbol {other}"))),
            }
        }
        SExpr::List(items) => {
            let SExpr::Atom(op) = items
                .first()
                .ok_or_else(|| Error::Schema("empty application".into()))?
            else {
                return Err(Error::Schema("non-atomic operator".into()));
            };
            let args: Vec<SmtValue> = items[1..]
                .iter()
                .map(|e| eval(e, env))
                .collect::<Result<_>>()?;
            let nums = || -> Result<Vec<Rat>> {
                args.iter()
                    .map(|v| match v {
                        SmtValue::Num(r) => Ok(r.clone()),
                        SmtValue::Bool(_) => Err(Error::Schema(format!(
                            "boolean argument to numeric operator {op}"
                        ))),
                    })
                    .collect()
            };
            match op.as_str() {
                "+" => Ok(SmtValue::Num(nums()?.into_iter().sum())),
                "*" => Ok(SmtValue::Num(
                    nums()?.into_iter().product(),
                )),
                "-" => {
                    let ns = nums()?;
                    match ns.len() {
                        1 => Ok(SmtValue::Num(-&ns[0])),
                        _ => Ok(SmtValue::Num(
                            ns[1..].iter().fold(ns[0].clone(), |acc, v| acc - v),
                        )),
                    }
                }
                "/" => {
                    let ns = nums()?;
                    if ns.len() != 2 || ns[1].is_zero() {
                        return Err(Error::Schema("bad division".into()));
                    }
                    Ok(SmtValue::Num(&ns[0] / &ns[1]))
                }
                ">=" | "<=" | ">" | "<" | "=" => {
                    let ns = nums()?;
                    if ns.len() != 2 {
                        return Err(Error::Schema(format!("{op} expects two arguments")));
                    }
                    let ord = ns[0].cmp(&ns[1]);
                    let b = match op.as_str() {
                        ">=" => ord != std::cmp::Ordering::Less,
                        "<=" => ord != std::cmp::Ordering::Greater,
                        ">" => ord == std::cmp::Ordering::Greater,
                        "<" => ord == std::cmp::Ordering::Less,
                        _ => ord == std::cmp::Ordering::Equal,
                    };
                    Ok(SmtValue::Bool(b))
                }
                "ite" => {
                    let SmtValue::Bool(c) = args[0] else {
                        return Err(Error::Schema("non-boolean ite condition".into()));
                    };
                    Ok(if c { args[1].clone() } else { args[2].clone() })
                }
                other => Err(Error::Schema(format!("unsupported operator {other}"))),
            }
        }
    }
}

/// Binds `x_i` to the given input, folds every definition in order, and
/// reads back the named symbols. Exact rational arithmetic throughout.
pub fn eval_outputs(script: &Script, input: &[Rat], outputs: &[String]) -> Result<Vec<Rat>> {
    if input.len() != script.consts.len() {
        return Err(Error::Schema(format!(
            "{} inputs for {} declared constants",
            input.len(),
            script.consts.len()
        )));
    }
    let mut env: HashMap<String, Rat> = script
        .consts
        .iter()
        .cloned()
        .zip(input.iter().cloned())
        .collect();
    for (name, body) in &script.defs {
        match eval(body, &env)? {
            SmtValue::Num(v) => {
                env.insert(name.clone(), v);
            }
            SmtValue::Bool(_) => {
                return Err(Error::Schema(format!("definition {name} is boolean")))
            }
        }
    }
    outputs
        .iter()
        .map(|name| {
            env.get(name)
                .cloned()
                .ok_or_else(|| Error::Schema(format!("unknown output symbol {name}")))
        })
        .collect()
}
