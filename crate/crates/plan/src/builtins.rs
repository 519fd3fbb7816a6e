//! Pure builtin functions and value methods. None of these touch the host.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::value::Value;

const BUILTINS: &[&str] = &[
    "print", "len", "str", "int", "float", "bool", "range", "abs", "min", "max", "sum", "sorted",
    "type", "round", "list", "enumerate", "zip", "keys", "values",
];

const RANGE_LIMIT: i64 = 1_000_000;

pub fn is_builtin(name: &str) -> bool {
    BUILTINS.contains(&name)
}

fn arity(name: &str, args: &[Value], min: usize, max: usize) -> Result<(), String> {
    if args.len() < min || args.len() > max {
        return Err(format!("{name}() got {} arguments", args.len()));
    }
    Ok(())
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Int(n) => Some(*n as f64),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

fn compare(a: &Value, b: &Value) -> Result<std::cmp::Ordering, String> {
    match (a, b) {
        (Value::Str(x), Value::Str(y)) => Ok(x.cmp(y)),
        _ => match (as_f64(a), as_f64(b)) {
            (Some(x), Some(y)) => Ok(x.total_cmp(&y)),
            _ => Err(format!("cannot compare {} and {}", a.kind(), b.kind())),
        },
    }
}

fn items_of(name: &str, args: Vec<Value>) -> Result<Vec<Value>, String> {
    if args.len() == 1 {
        match args.into_iter().next().unwrap() {
            Value::List(items) => Ok(items.as_ref().clone()),
            other => Err(format!("{name}() expects a list, got {}", other.kind())),
        }
    } else {
        Ok(args)
    }
}

pub fn call(name: &str, args: Vec<Value>) -> Result<Value, String> {
    match name {
        "len" => {
            arity(name, &args, 1, 1)?;
            Ok(Value::Int(match &args[0] {
                Value::Str(s) => s.chars().count() as i64,
                Value::List(l) => l.len() as i64,
                Value::Map(m) => m.len() as i64,
                other => return Err(format!("len() of {}", other.kind())),
            }))
        }
        "str" => {
            arity(name, &args, 1, 1)?;
            Ok(Value::Str(args[0].to_string()))
        }
        "int" => {
            arity(name, &args, 1, 1)?;
            match &args[0] {
                Value::Int(n) => Ok(Value::Int(*n)),
                Value::Float(f) if f.is_finite() => Ok(Value::Int(f.trunc() as i64)),
                Value::Bool(b) => Ok(Value::Int(*b as i64)),
                Value::Str(s) => {
                    s.trim().parse().map(Value::Int).map_err(|_| format!("invalid int literal {s:?}"))
                }
                other => Err(format!("int() of {}", other.kind())),
            }
        }
        "float" => {
            arity(name, &args, 1, 1)?;
            match &args[0] {
                Value::Str(s) => s
                    .trim()
                    .parse()
                    .map(Value::Float)
                    .map_err(|_| format!("invalid float literal {s:?}")),
                v => as_f64(v).map(Value::Float).ok_or_else(|| format!("float() of {}", v.kind())),
            }
        }
        "bool" => {
            arity(name, &args, 1, 1)?;
            Ok(Value::Bool(args[0].truthy()))
        }
        "range" => {
            arity(name, &args, 1, 3)?;
            let ints: Vec<i64> = args
                .iter()
                .map(|a| a.as_int().ok_or_else(|| "range() expects ints".to_string()))
                .collect::<Result<_, _>>()?;
            let (start, stop, step) = match ints.as_slice() {
                [stop] => (0, *stop, 1),
                [start, stop] => (*start, *stop, 1),
                [start, stop, step] => (*start, *stop, *step),
                _ => unreachable!(),
            };
            if step == 0 {
                return Err("range() step must not be zero".into());
            }
            let len = if step > 0 {
                (stop.saturating_sub(start)).max(0).saturating_add(step - 1) / step
            } else {
                (start.saturating_sub(stop)).max(0).saturating_add(-step - 1) / -step
            };
            if len > RANGE_LIMIT {
                return Err(format!("range of {len} elements exceeds limit"));
            }
            Ok(Value::list((0..len).map(|i| Value::Int(start + i * step)).collect()))
        }
        "abs" => {
            arity(name, &args, 1, 1)?;
            match &args[0] {
                Value::Int(n) => n.checked_abs().map(Value::Int).ok_or_else(|| "integer overflow".into()),
                Value::Float(f) => Ok(Value::Float(f.abs())),
                other => Err(format!("abs() of {}", other.kind())),
            }
        }
        "min" | "max" => {
            let items = items_of(name, args)?;
            let mut best: Option<Value> = None;
            for item in items {
                best = Some(match best {
                    None => item,
                    Some(b) => {
                        let ord = compare(&item, &b)?;
                        if (name == "min" && ord.is_lt()) || (name == "max" && ord.is_gt()) {
                            item
                        } else {
                            b
                        }
                    }
                });
            }
            best.ok_or_else(|| format!("{name}() of empty sequence"))
        }
        "sum" => {
            let items = items_of(name, args)?;
            let mut int_total: i64 = 0;
            let mut float_total = 0.0;
            let mut is_float = false;
            for item in items {
                match item {
                    Value::Int(n) => {
                        int_total = int_total.checked_add(n).ok_or("integer overflow")?
                    }
                    Value::Float(f) => {
                        is_float = true;
                        float_total += f;
                    }
                    other => return Err(format!("sum() of {}", other.kind())),
                }
            }
            Ok(if is_float {
                Value::Float(float_total + int_total as f64)
            } else {
                Value::Int(int_total)
            })
        }
        "sorted" => {
            let mut items = items_of(name, args)?;
            sort_values(&mut items)?;
            Ok(Value::list(items))
        }
        "type" => {
            arity(name, &args, 1, 1)?;
            Ok(Value::str(args[0].kind()))
        }
        "round" => {
            arity(name, &args, 1, 2)?;
            let x = as_f64(&args[0]).ok_or("round() expects a number")?;
            match args.get(1) {
                None => Ok(Value::Int(x.round() as i64)),
                Some(Value::Int(d)) => {
                    let p = 10f64.powi(*d as i32);
                    Ok(Value::Float((x * p).round() / p))
                }
                Some(_) => Err("round() digits must be int".into()),
            }
        }
        "list" => {
            arity(name, &args, 1, 1)?;
            Ok(match &args[0] {
                Value::List(l) => Value::List(l.clone()),
                Value::Str(s) => Value::list(s.chars().map(|c| Value::Str(c.into())).collect()),
                Value::Map(m) => Value::list(m.keys().map(|k| Value::Str(k.clone())).collect()),
                other => return Err(format!("list() of {}", other.kind())),
            })
        }
        "enumerate" => {
            arity(name, &args, 1, 1)?;
            let Value::List(l) = &args[0] else { return Err("enumerate() expects a list".into()) };
            Ok(Value::list(
                l.iter()
                    .enumerate()
                    .map(|(i, v)| Value::list(vec![Value::Int(i as i64), v.clone()]))
                    .collect(),
            ))
        }
        "zip" => {
            arity(name, &args, 2, 2)?;
            let (Value::List(a), Value::List(b)) = (&args[0], &args[1]) else {
                return Err("zip() expects two lists".into());
            };
            Ok(Value::list(
                a.iter().zip(b.iter()).map(|(x, y)| Value::list(vec![x.clone(), y.clone()])).collect(),
            ))
        }
        "keys" | "values" => {
            arity(name, &args, 1, 1)?;
            let Value::Map(m) = &args[0] else { return Err(format!("{name}() expects a map")) };
            Ok(if name == "keys" {
                Value::list(m.keys().map(|k| Value::Str(k.clone())).collect())
            } else {
                Value::list(m.values().cloned().collect())
            })
        }
        other => Err(format!("unknown builtin {other}")),
    }
}

fn sort_values(items: &mut [Value]) -> Result<(), String> {
    let mut err = None;
    items.sort_by(|a, b| {
        compare(a, b).unwrap_or_else(|e| {
            err.get_or_insert(e);
            std::cmp::Ordering::Equal
        })
    });
    err.map_or(Ok(()), Err)
}

/// Calls `method` on `recv`. Returns the result and whether the receiver
/// was modified (the caller writes it back to the binding).
pub fn method(recv: &mut Value, method: &str, args: Vec<Value>) -> Result<(Value, bool), String> {
    let kind = recv.kind();
    match recv {
        Value::List(items) => list_method(items, method, args),
        Value::Map(entries) => map_method(entries, method, args),
        Value::Str(s) => str_method(s, method, args).map(|v| (v, false)),
        _ => Err(format!("{kind} has no method {method}")),
    }
}

fn list_method(items: &mut Arc<Vec<Value>>, method: &str, args: Vec<Value>) -> Result<(Value, bool), String> {
    match method {
        "append" => {
            arity(method, &args, 1, 1)?;
            Arc::make_mut(items).push(args.into_iter().next().unwrap());
            Ok((Value::None, true))
        }
        "extend" => {
            arity(method, &args, 1, 1)?;
            let Value::List(more) = &args[0] else { return Err("extend() expects a list".into()) };
            Arc::make_mut(items).extend(more.iter().cloned());
            Ok((Value::None, true))
        }
        "insert" => {
            arity(method, &args, 2, 2)?;
            let i = args[0].as_int().ok_or("insert() index must be int")?;
            let v = Arc::make_mut(items);
            let idx = if i < 0 { (v.len() as i64 + i).max(0) } else { i.min(v.len() as i64) };
            v.insert(idx as usize, args[1].clone());
            Ok((Value::None, true))
        }
        "pop" => {
            arity(method, &args, 0, 1)?;
            let v = Arc::make_mut(items);
            if v.is_empty() {
                return Err("pop from empty list".into());
            }
            let idx = match args.first() {
                None => v.len() - 1,
                Some(Value::Int(i)) => {
                    let j = if *i < 0 { v.len() as i64 + i } else { *i };
                    if j < 0 || j as usize >= v.len() {
                        return Err("pop index out of range".into());
                    }
                    j as usize
                }
                Some(_) => return Err("pop() index must be int".into()),
            };
            Ok((v.remove(idx), true))
        }
        "reverse" => {
            Arc::make_mut(items).reverse();
            Ok((Value::None, true))
        }
        "sort" => {
            sort_values(Arc::make_mut(items).as_mut_slice())?;
            Ok((Value::None, true))
        }
        "index" => {
            arity(method, &args, 1, 1)?;
            items
                .iter()
                .position(|v| v == &args[0])
                .map(|i| (Value::Int(i as i64), false))
                .ok_or_else(|| format!("{} is not in list", args[0].repr()))
        }
        "count" => {
            arity(method, &args, 1, 1)?;
            Ok((Value::Int(items.iter().filter(|v| *v == &args[0]).count() as i64), false))
        }
        "copy" => Ok((Value::list(items.as_ref().clone()), false)),
        _ => Err(format!("list has no method {method}")),
    }
}

fn map_method(
    entries: &mut Arc<BTreeMap<String, Value>>,
    method: &str,
    args: Vec<Value>,
) -> Result<(Value, bool), String> {
    let key = |args: &[Value]| -> Result<String, String> {
        args.first()
            .and_then(|k| k.as_str().map(str::to_string))
            .ok_or_else(|| format!("{method}() key must be str"))
    };
    match method {
        "get" => {
            arity(method, &args, 1, 2)?;
            let k = key(&args)?;
            Ok((entries.get(&k).cloned().or_else(|| args.get(1).cloned()).unwrap_or(Value::None), false))
        }
        "keys" => Ok((Value::list(entries.keys().map(|k| Value::Str(k.clone())).collect()), false)),
        "values" => Ok((Value::list(entries.values().cloned().collect()), false)),
        "items" => Ok((
            Value::list(
                entries.iter().map(|(k, v)| Value::list(vec![Value::Str(k.clone()), v.clone()])).collect(),
            ),
            false,
        )),
        "pop" => {
            arity(method, &args, 1, 2)?;
            let k = key(&args)?;
            match Arc::make_mut(entries).remove(&k) {
                Some(v) => Ok((v, true)),
                None => args.get(1).cloned().map(|d| (d, false)).ok_or_else(|| format!("key {k:?} not found")),
            }
        }
        "update" => {
            arity(method, &args, 1, 1)?;
            let Value::Map(other) = &args[0] else { return Err("update() expects a map".into()) };
            let m = Arc::make_mut(entries);
            for (k, v) in other.iter() {
                m.insert(k.clone(), v.clone());
            }
            Ok((Value::None, true))
        }
        "copy" => Ok((Value::map(entries.as_ref().clone()), false)),
        _ => Err(format!("map has no method {method}")),
    }
}

fn str_arg<'a>(method: &str, args: &'a [Value], i: usize) -> Result<&'a str, String> {
    args.get(i).and_then(Value::as_str).ok_or_else(|| format!("{method}() expects str arguments"))
}

fn str_method(s: &str, method: &str, args: Vec<Value>) -> Result<Value, String> {
    Ok(match method {
        "upper" => Value::Str(s.to_uppercase()),
        "lower" => Value::Str(s.to_lowercase()),
        "strip" => Value::str(s.trim()),
        "split" => {
            arity(method, &args, 0, 1)?;
            let parts: Vec<Value> = if args.is_empty() {
                s.split_whitespace().map(Value::str).collect()
            } else {
                let sep = str_arg(method, &args, 0)?;
                if sep.is_empty() {
                    return Err("empty separator".into());
                }
                s.split(sep).map(Value::str).collect()
            };
            Value::list(parts)
        }
        "join" => {
            arity(method, &args, 1, 1)?;
            let Value::List(items) = &args[0] else { return Err("join() expects a list".into()) };
            Value::Str(items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(s))
        }
        "replace" => {
            arity(method, &args, 2, 2)?;
            Value::Str(s.replace(str_arg(method, &args, 0)?, str_arg(method, &args, 1)?))
        }
        "startswith" => Value::Bool(s.starts_with(str_arg(method, &args, 0)?)),
        "endswith" => Value::Bool(s.ends_with(str_arg(method, &args, 0)?)),
        "find" => {
            let needle = str_arg(method, &args, 0)?;
            Value::Int(s.find(needle).map_or(-1, |b| s[..b].chars().count() as i64))
        }
        "count" => {
            let needle = str_arg(method, &args, 0)?;
            if needle.is_empty() {
                return Err("count() of empty string".into());
            }
            Value::Int(s.matches(needle).count() as i64)
        }
        _ => return Err(format!("str has no method {method}")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_variants() {
        assert_eq!(call("range", vec![Value::Int(3)]).unwrap().to_string(), "[0, 1, 2]");
        assert_eq!(
            call("range", vec![Value::Int(5), Value::Int(0), Value::Int(-2)]).unwrap().to_string(),
            "[5, 3, 1]"
        );
        assert!(call("range", vec![Value::Int(10_000_000)]).is_err());
    }

    #[test]
    fn append_copies_shared_list() {
        let shared = Arc::new(vec![Value::Int(1)]);
        let mut recv = Value::List(shared.clone());
        let (_, mutated) = method(&mut recv, "append", vec![Value::Int(2)]).unwrap();
        assert!(mutated);
        assert_eq!(shared.len(), 1);
        assert_eq!(recv.to_string(), "[1, 2]");
    }

    #[test]
    fn string_methods() {
        let mut s = Value::str("a,b,c");
        assert_eq!(method(&mut s, "split", vec![Value::str(",")]).unwrap().0.to_string(), r#"["a", "b", "c"]"#);
        assert_eq!(method(&mut s, "find", vec![Value::str("b")]).unwrap().0, Value::Int(2));
    }

    #[test]
    fn sum_mixed() {
        assert_eq!(call("sum", vec![Value::Int(1), Value::Float(0.5)]).unwrap(), Value::Float(1.5));
        assert_eq!(call("max", vec![Value::Int(1), Value::Int(7), Value::Int(3)]).unwrap(), Value::Int(7));
    }
}
