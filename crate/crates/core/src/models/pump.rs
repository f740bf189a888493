//! Syringe-pump instance: the shaper switches a pump module between base
//! infusion (`0`) and bolus (`1`) and emits `base` / `bolus` when the mode
//! changes.

use std::sync::Arc;

use crate::config::{Element, Message, ModelObject, Value};
use crate::machine::Machine;
use crate::shaper::{DeviceValue, ShaperParams, ShaperState, ValueDomain};
use crate::time::Rational;

use super::{ShapedDevice, ShaperComponent, StimulusComponent};

pub const WRAPPER_CLASS: &str = "EPR-Wrapper{Safe-Pump}";
pub const PUMP_MODULE_CLASS: &str = "Pump-Module";
pub const MODULE_ID: &str = "pump-module";
pub const SET_MODE: &str = "set-mode";
pub const BASE: &str = "base";
pub const BOLUS: &str = "bolus";
pub const STOP: &str = "stop";

pub fn base_value() -> DeviceValue {
    Rational::from_integer(0)
}

pub fn bolus_value() -> DeviceValue {
    Rational::from_integer(1)
}

pub fn domain() -> ValueDomain {
    ValueDomain::new(base_value(), bolus_value())
}

fn mode_name(v: DeviceValue) -> &'static str {
    if v == bolus_value() {
        BOLUS
    } else {
        BASE
    }
}

pub fn set_mode(mode: &str) -> Message {
    Message::internal(SET_MODE, vec![Value::id(MODULE_ID), Value::id(mode)])
}

pub fn wrapper_init(params: &ShaperParams) -> ModelObject {
    let state = ShaperState::new(base_value(), params);
    let inner = ModelObject::new(MODULE_ID, PUMP_MODULE_CLASS).with("mode", Value::id(BASE));
    super::wrapper_object(MODULE_ID, WRAPPER_CLASS, inner, &state)
}

pub fn machine(params: ShaperParams) -> Machine {
    Machine::new()
        .with_component(Arc::new(ShaperComponent::new(Arc::new(PumpDevice), params, domain())))
        .with_component(Arc::new(StimulusComponent))
}

pub struct PumpDevice;

impl ShapedDevice for PumpDevice {
    fn wrapper_class(&self) -> &str {
        WRAPPER_CLASS
    }

    fn request_name(&self) -> &str {
        SET_MODE
    }

    fn decode_request(&self, arg: &Value) -> Option<DeviceValue> {
        match arg {
            Value::Id(s) if s == BASE => Some(base_value()),
            Value::Id(s) if s == BOLUS => Some(bolus_value()),
            Value::Num(n) => Some(*n),
            _ => None,
        }
    }

    fn encode_value(&self, v: DeviceValue) -> Value {
        Value::id(mode_name(v))
    }

    fn on_dispatch(&self, inner: &mut ModelObject, previous: DeviceValue, emitted: DeviceValue) -> Vec<Element> {
        if previous == emitted {
            return Vec::new();
        }
        let mode = mode_name(emitted);
        inner.set("mode", Value::id(mode));
        vec![Message::outgoing(mode, vec![]).into()]
    }
}
