#pragma once

#include "desknmt/error.hpp"
#include "desknmt/tensor.hpp"
#include "desknmt/corpus.hpp"
#include "desknmt/subword.hpp"
#include "desknmt/preprocess.hpp"
#include "desknmt/vocab.hpp"
#include "desknmt/nnet.hpp"
#include "desknmt/gradcheck.hpp"
#include "desknmt/train.hpp"
#include "desknmt/decode.hpp"
#include "desknmt/pipeline.hpp"
#include "desknmt/eval.hpp"
#include "desknmt/experiment.hpp"
