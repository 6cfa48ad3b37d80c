#pragma once

#include "larecon/core.hpp"
#include "larecon/grid.hpp"
#include "larecon/mesh.hpp"
#include "larecon/volume.hpp"
#include "larecon/marching_cubes.hpp"
#include "larecon/parallel.hpp"
#include "larecon/shapegen.hpp"
#include "larecon/pathgen.hpp"
#include "larecon/ded.hpp"
#include "larecon/eval.hpp"
