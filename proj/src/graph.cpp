#include "ltsft/graph.hpp"

namespace ltsft {

template class Graph<float>;
template class Graph<double>;

}  // namespace ltsft
