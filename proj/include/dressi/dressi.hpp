#pragma once

#include "dressi/autodiff.hpp"
#include "dressi/compiler.hpp"
#include "dressi/executor.hpp"
#include "dressi/gradcheck.hpp"
#include "dressi/hardsoftras.hpp"
#include "dressi/image.hpp"
#include "dressi/optimizers.hpp"
#include "dressi/png_io.hpp"
#include "dressi/scene.hpp"
#include "dressi/session.hpp"
#include "dressi/sobol.hpp"
#include "dressi/tasks.hpp"
#include "dressi/texture_grad.hpp"
