#ifndef IEB_IEB_HPP
#define IEB_IEB_HPP

#include "ieb/common.hpp"
#include "ieb/corpus.hpp"
#include "ieb/downstream.hpp"
#include "ieb/embstore.hpp"
#include "ieb/eval.hpp"
#include "ieb/labeler.hpp"
#include "ieb/pairgen.hpp"
#include "ieb/trainer.hpp"

#endif  // IEB_IEB_HPP
