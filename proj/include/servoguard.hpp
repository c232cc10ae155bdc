#pragma once

#include "servoguard/binary_io.hpp"
#include "servoguard/dataset.hpp"
#include "servoguard/detector.hpp"
#include "servoguard/dualmotor.hpp"
#include "servoguard/errors.hpp"
#include "servoguard/log.hpp"
#include "servoguard/network.hpp"
#include "servoguard/optimizer.hpp"
#include "servoguard/session.hpp"
#include "servoguard/signal.hpp"
#include "servoguard/toy_resnet.hpp"
#include "servoguard/trainer.hpp"
#include "servoguard/transform.hpp"
#include "servoguard/weights.hpp"
#include "servoguard/wire.hpp"
