/*
 * Copyright 2026 The DDG Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <string>
#include <vector>

namespace ddg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;  ///< NaN leaves a gap
};

struct ChartOptions {
  std::string title;
  std::string x_label = "epoch";
  std::string y_label = "accuracy (%)";
  int width = 640;
  int height = 400;
  /// Fixed y range; when min >= max the range is fitted to the data.
  double y_min = 0.0;
  double y_max = 0.0;
};

/// Self-contained SVG line chart with axes, ticks and a legend.
std::string render_line_chart(const std::vector<Series>& series, const ChartOptions& options);

}  // namespace ddg
