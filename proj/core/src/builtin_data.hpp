#pragma once

namespace peermarket::data {

extern const char* const three_node_json;
extern const char* const three_node_fitted_json;
extern const char* const ieee14_json;

}  // namespace peermarket::data
