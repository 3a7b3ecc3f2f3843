# This file is part of xtcp.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.
"""xtcp: explainable learning-to-rank test case prioritisation
"""

from .errors import *
from .buildHistory import *
from .readBuildHistoryTask import *
from .syntheticBuilds import *
from .rankingMetrics import *
from .regressionTree import *
from .lambdaMart import *
from .breakDown import *
from .explanationSimilarity import *
from .configLoader import *
from .experiment import *
from .buildTimeline import *
from .reportWriter import *
from .version import *
