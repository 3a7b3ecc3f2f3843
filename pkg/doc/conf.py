from documenteer.conf.pipelinespkg import *


project = "xtcp"
html_theme_options["logotext"] = project
html_title = project
html_short_title = project
